//! The compressed fully-connected layer.
//!
//! A `d_out x d_in` weight matrix is virtual: entry `(i, j)` is recovered on
//! demand from the stored vector `w` through a hash family and, except in
//! single-hash mode, a small reconstruction network. Four modes:
//!
//! * `HashedNets`  - one hash pair, identity mapping: `V_ij = sign * w[h(i,j)]`
//! * `FunHash`     - `U` pairs feeding `g(x_ij; alpha)` with owned `alpha`
//! * `FunHashDual` - like `FunHash`, but `alpha` itself is fetched per entry
//!                   from a second hashed vector `w'`
//! * `MultiHop`    - `w` is virtual too, reconstructed recursively from a
//!                   strictly smaller stored vector through further hops
//!
//! Only `w` (or the final hop's vector), the reconstruction parameters, and
//! the dense bias are trainable; the virtual dimensions can grow without
//! adding a single stored scalar.

use crate::error::{Error, Result};
use crate::hash::{HashCache, HashFamily};
use crate::recon::{ReconNet, ReconWorkspace};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

/// Default scratch budget for materializing a virtual matrix (bytes).
pub const DEFAULT_SCRATCH_BUDGET: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HashMode {
    Online,
    Cached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMode {
    HashedNets,
    FunHash,
    FunHashDual,
    MultiHop,
}

impl LayerMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerMode::HashedNets => "hashednets",
            LayerMode::FunHash => "funhash",
            LayerMode::FunHashDual => "funhash-dual",
            LayerMode::MultiHop => "multihop",
        }
    }
}

/// Second compression space for dual-space hashing: one hash pair per slot
/// of the reconstruction parameter vector, fetching from `w'`.
#[derive(Debug, Clone)]
pub struct DualSpace {
    pub(crate) family: HashFamily,
    pub(crate) w_prime: Vec<f64>,
}

impl DualSpace {
    pub fn k_prime(&self) -> usize {
        self.w_prime.len()
    }

    pub fn w_prime(&self) -> &[f64] {
        &self.w_prime
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }
}

/// One recursion level of multi-hop compression: reconstructs the vector
/// above it (`out_len` entries) from the vector below via its own hash
/// family and reconstruction network.
#[derive(Debug, Clone)]
pub struct Hop {
    pub(crate) family: HashFamily,
    pub(crate) recon: ReconNet,
    pub(crate) out_len: usize,
}

impl Hop {
    pub fn buckets(&self) -> usize {
        self.family.buckets()
    }

    pub fn recon(&self) -> &ReconNet {
        &self.recon
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }
}

/// Per-batch forward state a layer hands to its own backward pass.
#[derive(Debug, Clone, Default)]
pub struct LayerScratch {
    /// Materialized virtual matrix, when it fit the scratch budget.
    v: Option<Array2<f64>>,
    /// Resolved vectors `w^(0) .. w^(M)` for multi-hop; `[0]` is the
    /// effective `w`.
    levels: Option<Vec<Vec<f64>>>,
}

/// Gradients of one batch with respect to everything the layer stores.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    /// Gradient of the stored vector (`w`, or the final hop's vector).
    pub d_w: Vec<f64>,
    /// Gradient of the owned reconstruction parameters (empty when the mode
    /// stores none).
    pub d_alpha: Vec<f64>,
    pub d_b: Vec<f64>,
    /// Gradient with respect to the layer input, batch x d_in.
    pub d_input: Array2<f64>,
    /// Dual mode only: gradient of `w'`.
    pub d_w_prime: Vec<f64>,
    /// Multi-hop only: gradient of each hop's reconstruction parameters.
    pub d_hop_alphas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct VirtualLayer {
    d_in: usize,
    d_out: usize,
    mode: LayerMode,
    family: HashFamily,
    recon: Option<ReconNet>,
    w: Vec<f64>,
    bias: Vec<f64>,
    dual: Option<DualSpace>,
    hops: Vec<Hop>,
    cache: Option<HashCache>,
    scratch_budget: usize,
}

impl VirtualLayer {
    /// Single-hash weight-sharing layer (identity reconstruction).
    pub fn hashednets<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        k: usize,
        hash_seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let family = HashFamily::new(hash_seed, 1, k)?;
        Ok(Self {
            d_in,
            d_out,
            mode: LayerMode::HashedNets,
            family,
            recon: None,
            w: init_vector(k, d_in, d_out, 1, rng),
            bias: vec![0.0; d_out],
            dual: None,
            hops: Vec::new(),
            cache: None,
            scratch_budget: DEFAULT_SCRATCH_BUDGET,
        })
    }

    /// Multi-hash layer with a jointly trained reconstruction network.
    pub fn funhash<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        k: usize,
        u: usize,
        g: usize,
        hash_seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let family = HashFamily::new(hash_seed, u, k)?;
        let recon = ReconNet::with_init(u, g, rng)?;
        Ok(Self {
            d_in,
            d_out,
            mode: LayerMode::FunHash,
            family,
            recon: Some(recon),
            w: init_vector(k, d_in, d_out, u, rng),
            bias: vec![0.0; d_out],
            dual: None,
            hops: Vec::new(),
            cache: None,
            scratch_budget: DEFAULT_SCRATCH_BUDGET,
        })
    }

    /// Dual-space layer: the reconstruction parameters are fetched per entry
    /// from `w'` through one extra hash pair per parameter slot.
    pub fn funhash_dual<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        k: usize,
        u: usize,
        g: usize,
        k_prime: usize,
        hash_seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let family = HashFamily::new(hash_seed, u, k)?;
        let recon = ReconNet::new(u, g)?;
        let slots = recon.param_count();
        let dual_family = HashFamily::new(hash_seed ^ 0x6475616C, slots, k_prime)?;
        let w_prime = (0..k_prime).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Ok(Self {
            d_in,
            d_out,
            mode: LayerMode::FunHashDual,
            family,
            recon: Some(recon),
            w: init_vector(k, d_in, d_out, u, rng),
            bias: vec![0.0; d_out],
            dual: Some(DualSpace { family: dual_family, w_prime }),
            hops: Vec::new(),
            cache: None,
            scratch_budget: DEFAULT_SCRATCH_BUDGET,
        })
    }

    /// Multi-hop layer: `w` (size `k`) is itself reconstructed from a chain
    /// of strictly smaller vectors; only the last vector is stored.
    #[allow(clippy::too_many_arguments)]
    pub fn multihop<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        k: usize,
        u: usize,
        g: usize,
        chain: &[usize],
        hop_u: usize,
        hop_g: usize,
        hash_seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let family = HashFamily::new(hash_seed, u, k)?;
        let recon = ReconNet::with_init(u, g, rng)?;
        let mut hops = Vec::with_capacity(chain.len());
        let mut prev = k;
        for (m, &size) in chain.iter().enumerate() {
            if size >= prev {
                return Err(Error::Config(format!(
                    "multi-hop chain must be strictly decreasing: hop {m} has {size} >= {prev}"
                )));
            }
            let hop_seed = hash_seed ^ (0x686F70 + m as u64);
            hops.push(Hop {
                family: HashFamily::new(hop_seed, hop_u, size)?,
                recon: ReconNet::with_init(hop_u, hop_g, rng)?,
                out_len: prev,
            });
            prev = size;
        }
        let stored = if chain.is_empty() { k } else { *chain.last().unwrap() };
        Ok(Self {
            d_in,
            d_out,
            mode: LayerMode::MultiHop,
            family,
            recon: Some(recon),
            w: init_vector(stored, d_in, d_out, u, rng),
            bias: vec![0.0; d_out],
            dual: None,
            hops,
            cache: None,
            scratch_budget: DEFAULT_SCRATCH_BUDGET,
        })
    }

    /// Reassemble a layer from stored pieces (checkpoint loading).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_raw_parts(
        d_in: usize,
        d_out: usize,
        mode: LayerMode,
        family: HashFamily,
        recon: Option<ReconNet>,
        w: Vec<f64>,
        bias: Vec<f64>,
        dual: Option<DualSpace>,
        hops: Vec<Hop>,
    ) -> Self {
        Self {
            d_in,
            d_out,
            mode,
            family,
            recon,
            w,
            bias,
            dual,
            hops,
            cache: None,
            scratch_budget: DEFAULT_SCRATCH_BUDGET,
        }
    }

    pub(crate) fn make_dual(family: HashFamily, w_prime: Vec<f64>) -> DualSpace {
        DualSpace { family, w_prime }
    }

    pub(crate) fn make_hop(family: HashFamily, recon: ReconNet, out_len: usize) -> Hop {
        Hop { family, recon, out_len }
    }

    pub(crate) fn hop_out_len(hop: &Hop) -> usize {
        hop.out_len
    }

    /// Switch to precomputed hashes; contents stay bit-identical to online
    /// evaluation.
    pub fn with_cached_hashes(mut self) -> Result<Self> {
        self.cache = Some(HashCache::build(&self.family, self.d_out, self.d_in)?);
        Ok(self)
    }

    pub fn with_scratch_budget(mut self, bytes: usize) -> Self {
        self.scratch_budget = bytes;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d_in, self.d_out)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn mode(&self) -> LayerMode {
        self.mode
    }

    pub fn hash_mode(&self) -> HashMode {
        if self.cache.is_some() {
            HashMode::Cached
        } else {
            HashMode::Online
        }
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    pub fn num_hashes(&self) -> usize {
        self.family.len()
    }

    pub fn bucket_count(&self) -> usize {
        self.family.buckets()
    }

    pub fn recon(&self) -> Option<&ReconNet> {
        self.recon.as_ref()
    }

    pub fn recon_mut(&mut self) -> Option<&mut ReconNet> {
        self.recon.as_mut()
    }

    pub fn dual(&self) -> Option<&DualSpace> {
        self.dual.as_ref()
    }

    pub fn dual_w_prime_mut(&mut self) -> Option<&mut [f64]> {
        self.dual.as_mut().map(|d| d.w_prime.as_mut_slice())
    }

    pub fn hops(&self) -> &[Hop] {
        &self.hops
    }

    pub fn hop_recon_params_mut(&mut self, m: usize) -> &mut [f64] {
        self.hops[m].recon.params_mut()
    }

    /// The stored vector: `w` in plain modes, the final hop's vector for
    /// multi-hop.
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Update scale for parameters shared across every virtual entry.
    ///
    /// `dL/dalpha` is a sum of `d_in * d_out` per-entry terms while each
    /// `w` bucket only collects a handful, so a shared global learning rate
    /// either freezes `w` or blows up the reconstruction net. Scaling the
    /// shared-parameter step by the sharing count turns that sum into a
    /// mean; the gradients themselves are untouched.
    pub fn shared_update_scale(&self) -> f64 {
        1.0 / (self.d_in * self.d_out) as f64
    }

    /// Update scale for hop `m`'s reconstruction parameters, shared across
    /// the vector they reconstruct.
    pub fn hop_update_scale(&self, m: usize) -> f64 {
        1.0 / self.hops[m].out_len as f64
    }

    /// Count of trainable scalars actually stored by this layer.
    pub fn stored_params(&self) -> usize {
        let alpha = self.recon.as_ref().map_or(0, |r| r.param_count());
        match self.mode {
            LayerMode::HashedNets => self.w.len() + self.bias.len(),
            LayerMode::FunHash => self.w.len() + alpha + self.bias.len(),
            // alpha is virtual in dual mode; w' replaces it
            LayerMode::FunHashDual => {
                self.w.len() + self.dual.as_ref().unwrap().w_prime.len() + self.bias.len()
            }
            LayerMode::MultiHop => {
                let hop_alpha: usize = self.hops.iter().map(|h| h.recon.param_count()).sum();
                self.w.len() + hop_alpha + alpha + self.bias.len()
            }
        }
    }

    /// Size of the virtual weight matrix this layer stands in for.
    pub fn virtual_params(&self) -> usize {
        self.d_in * self.d_out
    }

    /// `K / (d_in * d_out)`; the bias is excluded on both sides.
    pub fn compression_ratio(&self) -> f64 {
        self.family.buckets() as f64 / self.virtual_params() as f64
    }

    #[inline]
    fn lookup(&self, i: usize, j: usize, idx: &mut [u32], sgn: &mut [f64]) {
        match &self.cache {
            Some(cache) => cache.lookup_into(i, j, idx, sgn),
            None => self.family.lookup_into(i, j, idx, sgn),
        }
    }

    /// Resolve the multi-hop chain: `levels[m]` is `w^(m)`, `levels[0]` the
    /// effective `w`, and the last level the stored vector.
    fn resolve_levels(&self) -> Vec<Vec<f64>> {
        let m = self.hops.len();
        let mut levels = vec![Vec::new(); m + 1];
        levels[m] = self.w.clone();
        for (idx, hop) in self.hops.iter().enumerate().rev() {
            let below = &levels[idx + 1];
            let hu = hop.family.len();
            let mut x = vec![0.0; hu];
            let mut hidx = vec![0u32; hu];
            let mut hsgn = vec![0.0; hu];
            let mut ws = ReconWorkspace::for_net(&hop.recon);
            let mut out = vec![0.0; hop.out_len];
            for (k, slot) in out.iter_mut().enumerate() {
                hop.family.lookup_into(k, 0, &mut hidx, &mut hsgn);
                for u in 0..hu {
                    x[u] = hsgn[u] * below[hidx[u] as usize];
                }
                *slot = hop.recon.forward(&x, &mut ws);
            }
            levels[idx] = out;
        }
        levels
    }

    /// The effective `w` the virtual matrix is addressed into: the stored
    /// vector itself, or the recursively reconstructed one for multi-hop.
    pub fn multihop_resolve(&self) -> Vec<f64> {
        if self.hops.is_empty() {
            self.w.clone()
        } else {
            self.resolve_levels().swap_remove(0)
        }
    }

    fn make_scratch(&self) -> LayerScratch {
        LayerScratch {
            v: None,
            levels: if self.hops.is_empty() { None } else { Some(self.resolve_levels()) },
        }
    }

    fn effective_w<'a>(&'a self, scratch: &'a LayerScratch) -> &'a [f64] {
        match &scratch.levels {
            Some(levels) => &levels[0],
            None => &self.w,
        }
    }

    /// Ordered hashed values feeding the reconstruction of entry `(i, j)`:
    /// `x_ij[u] = sign_u(i,j) * w[h_u(i,j)]`.
    pub fn gather_inputs(&self, i: usize, j: usize) -> Vec<f64> {
        let scratch = self.make_scratch();
        let w = self.effective_w(&scratch);
        let u = self.family.len();
        let mut idx = vec![0u32; u];
        let mut sgn = vec![0.0; u];
        self.lookup(i, j, &mut idx, &mut sgn);
        (0..u).map(|k| sgn[k] * w[idx[k] as usize]).collect()
    }

    /// One virtual entry `V_ij`, per the layer mode.
    pub fn materialize_entry(&self, i: usize, j: usize) -> f64 {
        let scratch = self.make_scratch();
        let mut eval = EntryEval::new(self, &scratch);
        eval.entry(i, j)
    }

    /// Dense `d_out x d_in` snapshot of the virtual matrix. Scratch only:
    /// never serialized, and refused beyond the configured budget.
    pub fn materialize_matrix(&self) -> Result<Array2<f64>> {
        let scratch = self.make_scratch();
        self.materialize_with(&scratch)
    }

    fn materialize_with(&self, scratch: &LayerScratch) -> Result<Array2<f64>> {
        let needed = self.d_out * self.d_in * std::mem::size_of::<f64>();
        if needed > self.scratch_budget {
            return Err(Error::Resource {
                what: "virtual matrix scratch",
                needed,
                budget: self.scratch_budget,
            });
        }
        let mut eval = EntryEval::new(self, scratch);
        let mut v = Array2::zeros((self.d_out, self.d_in));
        for i in 0..self.d_out {
            for j in 0..self.d_in {
                v[[i, j]] = eval.entry(i, j);
            }
        }
        Ok(v)
    }

    /// Pre-activations `z = a V^T + b` for a batch of row-vector inputs.
    pub fn forward(&self, a: &Array2<f64>) -> Result<(Array2<f64>, LayerScratch)> {
        if a.ncols() != self.d_in {
            return Err(Error::DimensionMismatch {
                what: "layer input",
                expected: self.d_in,
                got: a.ncols(),
            });
        }
        let mut scratch = self.make_scratch();
        let bias = Array1::from_vec(self.bias.clone());
        let z = match self.materialize_with(&scratch) {
            Ok(v) => {
                let z = a.dot(&v.t()) + &bias;
                scratch.v = Some(v);
                z
            }
            Err(Error::Resource { .. }) => {
                // stream one virtual row at a time
                let mut eval = EntryEval::new(self, &scratch);
                let batch = a.nrows();
                let mut z = Array2::zeros((batch, self.d_out));
                let mut row = vec![0.0; self.d_in];
                for i in 0..self.d_out {
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot = eval.entry(i, j);
                    }
                    for s in 0..batch {
                        let mut acc = self.bias[i];
                        for j in 0..self.d_in {
                            acc += a[[s, j]] * row[j];
                        }
                        z[[s, i]] = acc;
                    }
                }
                z
            }
            Err(e) => return Err(e),
        };
        Ok((z, scratch))
    }

    /// Gradients for a batch: `delta[s, i] = dL/dz[s, i]`.
    pub fn backward(
        &self,
        a: &Array2<f64>,
        delta: &Array2<f64>,
        scratch: &LayerScratch,
    ) -> Result<LayerGrad> {
        if delta.ncols() != self.d_out {
            return Err(Error::DimensionMismatch {
                what: "layer delta",
                expected: self.d_out,
                got: delta.ncols(),
            });
        }
        // per-entry upstream summed over the batch
        let upstream = delta.t().dot(a);
        let d_b = delta.sum_axis(Axis(0)).to_vec();

        let d_input = match &scratch.v {
            Some(v) => delta.dot(v),
            None => {
                let mut eval = EntryEval::new(self, scratch);
                let batch = a.nrows();
                let mut d_input = Array2::zeros((batch, self.d_in));
                let mut row = vec![0.0; self.d_in];
                for i in 0..self.d_out {
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot = eval.entry(i, j);
                    }
                    for s in 0..batch {
                        let d = delta[[s, i]];
                        for j in 0..self.d_in {
                            d_input[[s, j]] += d * row[j];
                        }
                    }
                }
                d_input
            }
        };

        let eff_w = self.effective_w(scratch);
        let u = self.family.len();
        let mut idx = vec![0u32; u];
        let mut sgn = vec![0.0; u];
        let mut d_eff = vec![0.0; eff_w.len()];
        let mut d_alpha = self
            .recon
            .as_ref()
            .map_or_else(Vec::new, |r| vec![0.0; r.param_count()]);
        let mut d_w_prime = self
            .dual
            .as_ref()
            .map_or_else(Vec::new, |d| vec![0.0; d.w_prime.len()]);

        match self.mode {
            LayerMode::HashedNets => {
                for i in 0..self.d_out {
                    for j in 0..self.d_in {
                        let g_ij = upstream[[i, j]];
                        if g_ij == 0.0 {
                            continue;
                        }
                        self.lookup(i, j, &mut idx, &mut sgn);
                        d_eff[idx[0] as usize] += g_ij * sgn[0];
                    }
                }
            }
            LayerMode::FunHash | LayerMode::MultiHop => {
                let recon = self.recon.as_ref().unwrap();
                let mut ws = ReconWorkspace::for_net(recon);
                let mut x = vec![0.0; u];
                let mut d_x = vec![0.0; u];
                for i in 0..self.d_out {
                    for j in 0..self.d_in {
                        let g_ij = upstream[[i, j]];
                        if g_ij == 0.0 {
                            continue;
                        }
                        self.lookup(i, j, &mut idx, &mut sgn);
                        for k in 0..u {
                            x[k] = sgn[k] * eff_w[idx[k] as usize];
                        }
                        recon.forward(&x, &mut ws);
                        recon.backward_with(recon.params(), &mut ws, g_ij, &mut d_x, &mut d_alpha);
                        for k in 0..u {
                            d_eff[idx[k] as usize] += d_x[k] * sgn[k];
                        }
                    }
                }
            }
            LayerMode::FunHashDual => {
                let recon = self.recon.as_ref().unwrap();
                let dual = self.dual.as_ref().unwrap();
                let slots = recon.param_count();
                let mut ws = ReconWorkspace::for_net(recon);
                let mut x = vec![0.0; u];
                let mut d_x = vec![0.0; u];
                let mut alpha_ij = vec![0.0; slots];
                let mut d_alpha_ij = vec![0.0; slots];
                let mut didx = vec![0u32; slots];
                let mut dsgn = vec![0.0; slots];
                for i in 0..self.d_out {
                    for j in 0..self.d_in {
                        let g_ij = upstream[[i, j]];
                        if g_ij == 0.0 {
                            continue;
                        }
                        self.lookup(i, j, &mut idx, &mut sgn);
                        for k in 0..u {
                            x[k] = sgn[k] * eff_w[idx[k] as usize];
                        }
                        dual.family.lookup_into(i, j, &mut didx, &mut dsgn);
                        for r in 0..slots {
                            alpha_ij[r] = dsgn[r] * dual.w_prime[didx[r] as usize];
                        }
                        recon.forward_with(&alpha_ij, &x, &mut ws);
                        d_alpha_ij.fill(0.0);
                        recon.backward_with(&alpha_ij, &mut ws, g_ij, &mut d_x, &mut d_alpha_ij);
                        for k in 0..u {
                            d_eff[idx[k] as usize] += d_x[k] * sgn[k];
                        }
                        for r in 0..slots {
                            d_w_prime[didx[r] as usize] += d_alpha_ij[r] * dsgn[r];
                        }
                    }
                }
            }
        }

        // chain the effective-w gradient down the hop stack
        let (d_w, d_hop_alphas) = match &scratch.levels {
            None => (d_eff, Vec::new()),
            Some(levels) => {
                let mut d_hop_alphas: Vec<Vec<f64>> = self
                    .hops
                    .iter()
                    .map(|h| vec![0.0; h.recon.param_count()])
                    .collect();
                let mut d_level = d_eff;
                for (m, hop) in self.hops.iter().enumerate() {
                    let below = &levels[m + 1];
                    let hu = hop.family.len();
                    let mut x = vec![0.0; hu];
                    let mut d_x = vec![0.0; hu];
                    let mut hidx = vec![0u32; hu];
                    let mut hsgn = vec![0.0; hu];
                    let mut ws = ReconWorkspace::for_net(&hop.recon);
                    let mut d_below = vec![0.0; below.len()];
                    for (k, &up) in d_level.iter().enumerate() {
                        if up == 0.0 {
                            continue;
                        }
                        hop.family.lookup_into(k, 0, &mut hidx, &mut hsgn);
                        for u in 0..hu {
                            x[u] = hsgn[u] * below[hidx[u] as usize];
                        }
                        hop.recon.forward(&x, &mut ws);
                        hop.recon.backward_with(
                            hop.recon.params(),
                            &mut ws,
                            up,
                            &mut d_x,
                            &mut d_hop_alphas[m],
                        );
                        for u in 0..hu {
                            d_below[hidx[u] as usize] += d_x[u] * hsgn[u];
                        }
                    }
                    d_level = d_below;
                }
                (d_level, d_hop_alphas)
            }
        };

        Ok(LayerGrad {
            d_w,
            d_alpha,
            d_b,
            d_input,
            d_w_prime,
            d_hop_alphas,
        })
    }
}

// The reconstruction net starts as the mean of its U inputs, which scales
// entry variance by 1/U; widening w by sqrt(U) keeps the initial
// pre-activation variance in line with an uncompressed layer.
fn init_vector<R: Rng + ?Sized>(
    k: usize,
    d_in: usize,
    d_out: usize,
    num_hashes: usize,
    rng: &mut R,
) -> Vec<f64> {
    let bound = (6.0 / (d_in + d_out) as f64).sqrt() * (num_hashes as f64).sqrt();
    (0..k).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Reusable per-entry evaluator over a fixed forward state.
struct EntryEval<'a> {
    layer: &'a VirtualLayer,
    eff_w: &'a [f64],
    idx: Vec<u32>,
    sgn: Vec<f64>,
    x: Vec<f64>,
    ws: Option<ReconWorkspace>,
    dual_idx: Vec<u32>,
    dual_sgn: Vec<f64>,
    alpha_ij: Vec<f64>,
}

impl<'a> EntryEval<'a> {
    fn new(layer: &'a VirtualLayer, scratch: &'a LayerScratch) -> Self {
        let u = layer.family.len();
        let slots = match layer.mode {
            LayerMode::FunHashDual => layer.recon.as_ref().unwrap().param_count(),
            _ => 0,
        };
        Self {
            layer,
            eff_w: layer.effective_w(scratch),
            idx: vec![0; u],
            sgn: vec![0.0; u],
            x: vec![0.0; u],
            ws: layer.recon.as_ref().map(ReconWorkspace::for_net),
            dual_idx: vec![0; slots],
            dual_sgn: vec![0.0; slots],
            alpha_ij: vec![0.0; slots],
        }
    }

    #[inline]
    fn entry(&mut self, i: usize, j: usize) -> f64 {
        self.layer.lookup(i, j, &mut self.idx, &mut self.sgn);
        match self.layer.mode {
            LayerMode::HashedNets => self.sgn[0] * self.eff_w[self.idx[0] as usize],
            LayerMode::FunHash | LayerMode::MultiHop => {
                let recon = self.layer.recon.as_ref().unwrap();
                for k in 0..self.x.len() {
                    self.x[k] = self.sgn[k] * self.eff_w[self.idx[k] as usize];
                }
                recon.forward(&self.x, self.ws.as_mut().unwrap())
            }
            LayerMode::FunHashDual => {
                let recon = self.layer.recon.as_ref().unwrap();
                let dual = self.layer.dual.as_ref().unwrap();
                for k in 0..self.x.len() {
                    self.x[k] = self.sgn[k] * self.eff_w[self.idx[k] as usize];
                }
                dual.family
                    .lookup_into(i, j, &mut self.dual_idx, &mut self.dual_sgn);
                for r in 0..self.alpha_ij.len() {
                    self.alpha_ij[r] = self.dual_sgn[r] * dual.w_prime[self.dual_idx[r] as usize];
                }
                recon.forward_with(&self.alpha_ij, &self.x, self.ws.as_mut().unwrap())
            }
        }
    }
}
