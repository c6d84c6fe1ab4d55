//! Counter-based Gaussian noise for common-random-number experiments.
//!
//! Every Brownian increment is a pure function of `(seed, path, step, slot)`:
//! no generator state, no draw order. That buys three properties the rest of
//! the crate leans on:
//!
//! - bit-identical regeneration of any path's noise without storing it,
//! - identical noise regardless of scheduling (parallel path loops),
//! - coupling across time resolutions: a bundle is pinned to a `base_steps`
//!   grid, and a simulation on any coarser grid that divides it receives the
//!   summed fine increments, so two runs at `n` and `2n` steps see the same
//!   underlying Brownian path.
//!
//! Mixing is the splitmix64 finalizer chained over the coordinates; normals
//! come from Box-Muller on the mixed 64-bit words.

/// splitmix64 finalizer: bijective avalanche on 64 bits.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in the open interval (0,1); never returns 0 or 1.
fn uniform_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Two independent standard normals from the counter coordinates.
///
/// Stage constants keep, say, `(path, step) = (5, 0)` and `(0, 5)` from
/// colliding: each coordinate is folded in through its own avalanche round.
pub fn normal_pair(seed: u64, path: u64, step: u64, slot: u64) -> (f64, f64) {
    let mut h = mix64(seed ^ 0x8C67_66DD_0F5B_1E21);
    h = mix64(h ^ path);
    h = mix64(h ^ step);
    h = mix64(h ^ slot);
    let u1 = uniform_open(h);
    let u2 = uniform_open(mix64(h ^ 0xA5A5_A5A5_A5A5_A5A5));
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Wiener increments for one path, pinned to a reference grid of
/// `base_steps` equal steps over `[0, horizon]`.
///
/// Slot 0 carries the two boundary channels; slots `1 + k/2` carry the modal
/// channels pairwise. Increments on a coarser grid of `n` steps (where `n`
/// divides `base_steps`) are sums of the base increments they cover.
#[derive(Debug, Clone, Copy)]
pub struct NoiseBundle {
    pub seed: u64,
    pub path: usize,
    pub horizon: f64,
    pub base_steps: usize,
}

impl NoiseBundle {
    pub fn new(seed: u64, path: usize, horizon: f64, base_steps: usize) -> Self {
        debug_assert!(base_steps > 0 && horizon > 0.0);
        NoiseBundle {
            seed,
            path,
            horizon,
            base_steps,
        }
    }

    fn base_h(&self) -> f64 {
        self.horizon / self.base_steps as f64
    }

    fn base_boundary(&self, base_step: usize) -> (f64, f64) {
        let (zl, zr) = normal_pair(self.seed, self.path as u64, base_step as u64, 0);
        let s = self.base_h().sqrt();
        (s * zl, s * zr)
    }

    fn base_modal(&self, base_step: usize, mode: usize) -> f64 {
        let pair = normal_pair(
            self.seed,
            self.path as u64,
            base_step as u64,
            1 + (mode / 2) as u64,
        );
        let z = if mode % 2 == 0 { pair.0 } else { pair.1 };
        self.base_h().sqrt() * z
    }

    /// Ratio of base steps per coarse step. Panics (debug) unless `n_steps`
    /// divides `base_steps`; callers validate at construction time.
    fn stride(&self, n_steps: usize) -> usize {
        debug_assert!(
            n_steps > 0 && self.base_steps % n_steps == 0,
            "n_steps = {n_steps} must divide base_steps = {}",
            self.base_steps
        );
        self.base_steps / n_steps
    }

    /// Boundary-channel increments `(left, right)` over coarse step `step`
    /// of an `n_steps` grid; each has variance `horizon / n_steps`.
    pub fn boundary_increment(&self, step: usize, n_steps: usize) -> (f64, f64) {
        let stride = self.stride(n_steps);
        let mut l = 0.0;
        let mut r = 0.0;
        for s in step * stride..(step + 1) * stride {
            let (bl, br) = self.base_boundary(s);
            l += bl;
            r += br;
        }
        (l, r)
    }

    /// Modal-channel increments over coarse step `step`; `out.len()` sets the
    /// number of modes. Each entry has variance `horizon / n_steps`.
    pub fn modal_increments(&self, step: usize, n_steps: usize, out: &mut [f64]) {
        let stride = self.stride(n_steps);
        out.fill(0.0);
        for s in step * stride..(step + 1) * stride {
            for (k, o) in out.iter_mut().enumerate() {
                *o += self.base_modal(s, k);
            }
        }
    }
}
