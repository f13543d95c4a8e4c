//! Minimal neural-network substrate: a flat named parameter store with a
//! parallel gradient buffer, linear and GRU layers with hand-derived exact
//! backward passes, orthogonal initialization, global-norm gradient clipping,
//! and Adam. Everything is f64 and fully deterministic.

use crate::{Error, Result};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Handle to one parameter block inside the flat store. `cols == 1` marks a
/// vector (bias); matrices are row-major `rows × cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamId {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector plus its gradient and a name registry for
/// checkpointing. All layers of a model allocate out of one store so the
/// optimizer and the clipper see a single contiguous slice.
#[derive(Debug, Clone, Default)]
pub struct Params {
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    entries: Vec<(String, ParamId)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SavedEntry {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SavedParams {
    entries: Vec<SavedEntry>,
}

impl Params {
    pub fn new() -> Params {
        Params::default()
    }

    pub fn alloc(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        assert!(rows > 0 && cols > 0, "empty parameter {name}");
        assert!(
            self.entries.iter().all(|(n, _)| n != name),
            "duplicate parameter name {name}"
        );
        let id = ParamId {
            offset: self.data.len(),
            rows,
            cols,
        };
        self.data.resize(self.data.len() + rows * cols, 0.0);
        self.grad.resize(self.data.len(), 0.0);
        self.entries.push((name.to_string(), id));
        id
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.range()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.range()]
    }

    /// Simultaneous read access to the values and write access to the
    /// gradient, for backward passes.
    pub fn data_and_grad_mut(&mut self) -> (&[f64], &mut [f64]) {
        (&self.data, &mut self.grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad_global_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Scale the whole gradient so its global L2 norm is at most `max_norm`;
    /// returns the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_global_norm();
        if norm > max_norm {
            let s = max_norm / norm;
            for g in &mut self.grad {
                *g *= s;
            }
        }
        norm
    }

    pub fn entries(&self) -> &[(String, ParamId)] {
        &self.entries
    }

    pub fn to_json(&self) -> String {
        let saved = SavedParams {
            entries: self
                .entries
                .iter()
                .map(|(name, id)| SavedEntry {
                    name: name.clone(),
                    rows: id.rows,
                    cols: id.cols,
                    data: self.get(*id).to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&saved).expect("parameter serialization cannot fail")
    }

    /// Restore values from `text` into an identically-shaped store. Every
    /// entry must match by name and shape; extra or missing entries error.
    pub fn load_json(&mut self, text: &str) -> Result<()> {
        let saved: SavedParams = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<params>".into(),
            detail: e.to_string(),
        })?;
        if saved.entries.len() != self.entries.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} parameter blocks, model has {}",
                saved.entries.len(),
                self.entries.len()
            )));
        }
        for e in &saved.entries {
            let id = self
                .entries
                .iter()
                .find(|(n, _)| *n == e.name)
                .map(|(_, id)| *id)
                .ok_or_else(|| {
                    Error::Validation(format!("checkpoint block {} unknown to model", e.name))
                })?;
            if id.rows != e.rows || id.cols != e.cols || e.data.len() != id.len() {
                return Err(Error::Validation(format!(
                    "checkpoint block {} is {}x{} ({} values), model expects {}x{}",
                    e.name,
                    e.rows,
                    e.cols,
                    e.data.len(),
                    id.rows,
                    id.cols
                )));
            }
            self.data[id.range()].copy_from_slice(&e.data);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.load_json(&text).map_err(|e| match e {
            Error::Parse { detail, .. } => Error::Parse {
                path: path.display().to_string(),
                detail,
            },
            other => other,
        })
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// y = W x (row-major `rows × cols` W, `x` of length `cols`).
pub fn matvec(w: &[f64], x: &[f64], rows: usize, cols: usize, y: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        y[r] = acc;
    }
}

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Orthogonal rows/columns (whichever is the smaller dimension) scaled by
    /// `gain` — the standard recipe for recurrent policy networks.
    Orthogonal { gain: f64 },
    Zeros,
    Constant(f64),
}

/// Fill `w` (`rows × cols`, row-major) with a gain-scaled orthogonal matrix
/// built by modified Gram–Schmidt on a standard-normal draw.
pub fn orthogonal(rng: &mut impl RngCore, rows: usize, cols: usize, gain: f64, w: &mut [f64]) {
    assert_eq!(w.len(), rows * cols);
    let (n, m) = (rows.max(cols), rows.min(cols));
    // Draw an n×m matrix (column-major for the orthonormalization) and make
    // its columns orthonormal.
    let mut a = vec![0.0; n * m];
    crate::rng::fill_standard_normal(rng, &mut a);
    for j in 0..m {
        for k in 0..j {
            let mut dot = 0.0;
            for i in 0..n {
                dot += a[k * n + i] * a[j * n + i];
            }
            for i in 0..n {
                a[j * n + i] -= dot * a[k * n + i];
            }
        }
        let norm = (0..n).map(|i| a[j * n + i] * a[j * n + i]).sum::<f64>().sqrt();
        assert!(norm > 1e-8, "degenerate draw during orthogonal init");
        for i in 0..n {
            a[j * n + i] /= norm;
        }
    }
    // The tall orthonormal matrix is n×m; lay it out as rows×cols.
    for r in 0..rows {
        for c in 0..cols {
            let v = if rows >= cols {
                a[c * n + r] // W = Q
            } else {
                a[r * n + c] // W = Qᵀ
            };
            w[r * cols + c] = gain * v;
        }
    }
}

fn apply_init(p: &mut Params, id: ParamId, init: Init, rng: &mut impl RngCore) {
    match init {
        Init::Orthogonal { gain } => {
            let (rows, cols) = (id.rows, id.cols);
            let mut buf = vec![0.0; rows * cols];
            orthogonal(rng, rows, cols, gain, &mut buf);
            p.get_mut(id).copy_from_slice(&buf);
        }
        Init::Zeros => p.get_mut(id).fill(0.0),
        Init::Constant(v) => p.get_mut(id).fill(v),
    }
}

/// Dense layer y = W x + b.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        p: &mut Params,
        rng: &mut impl RngCore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
    ) -> Linear {
        let w = p.alloc(&format!("{name}.w"), out_dim, in_dim);
        let b = p.alloc(&format!("{name}.b"), out_dim, 1);
        apply_init(p, w, init, rng);
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, p: &Params, x: &[f64]) -> Vec<f64> {
        let w = p.get(self.w);
        let b = p.get(self.b);
        let mut y = vec![0.0; self.out_dim];
        matvec(w, x, self.out_dim, self.in_dim, &mut y);
        for r in 0..self.out_dim {
            y[r] += b[r];
        }
        y
    }

    /// Accumulate parameter gradients for upstream `dy` at input `x`, and
    /// accumulate the input gradient into `dx` when given.
    pub fn backward(&self, p: &mut Params, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(dy.len(), self.out_dim);
        let (wo, bo) = (self.w.offset, self.b.offset);
        let (data, grad) = p.data_and_grad_mut();
        for r in 0..self.out_dim {
            let g = dy[r];
            grad[bo + r] += g;
            let row = wo + r * self.in_dim;
            for c in 0..self.in_dim {
                grad[row + c] += g * x[c];
            }
        }
        if let Some(dx) = dx {
            debug_assert_eq!(dx.len(), self.in_dim);
            for r in 0..self.out_dim {
                let g = dy[r];
                let row = self.w.offset + r * self.in_dim;
                for c in 0..self.in_dim {
                    dx[c] += data[row + c] * g;
                }
            }
        }
    }
}

/// Gated recurrent unit cell:
///   r = σ(Wr x + Ur h + br)
///   z = σ(Wz x + Uz h + bz)
///   n = tanh(Wn x + r ⊙ (Un h) + bn)
///   h' = (1 − z) ⊙ n + z ⊙ h
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wn: ParamId,
    pub un: ParamId,
    pub bn: ParamId,
    pub in_dim: usize,
    pub hid: usize,
}

/// Per-step activations cached by the forward pass for exact BPTT.
#[derive(Debug, Clone)]
struct GruStepCache {
    x: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    un_h: Vec<f64>,
}

/// Forward trace over a sequence: `hs[0]` is the initial hidden state and
/// `hs[t + 1]` the state after consuming input t.
#[derive(Debug, Clone)]
pub struct GruTrace {
    pub hs: Vec<Vec<f64>>,
    steps: Vec<GruStepCache>,
}

impl GruTrace {
    pub fn last(&self) -> &[f64] {
        self.hs.last().expect("trace holds at least h0")
    }
}

impl GruCell {
    pub fn new(
        p: &mut Params,
        rng: &mut impl RngCore,
        name: &str,
        in_dim: usize,
        hid: usize,
        init: Init,
    ) -> GruCell {
        let wr = p.alloc(&format!("{name}.wr"), hid, in_dim);
        apply_init(p, wr, init, rng);
        let ur = p.alloc(&format!("{name}.ur"), hid, hid);
        apply_init(p, ur, init, rng);
        let br = p.alloc(&format!("{name}.br"), hid, 1);
        let wz = p.alloc(&format!("{name}.wz"), hid, in_dim);
        apply_init(p, wz, init, rng);
        let uz = p.alloc(&format!("{name}.uz"), hid, hid);
        apply_init(p, uz, init, rng);
        let bz = p.alloc(&format!("{name}.bz"), hid, 1);
        let wn = p.alloc(&format!("{name}.wn"), hid, in_dim);
        apply_init(p, wn, init, rng);
        let un = p.alloc(&format!("{name}.un"), hid, hid);
        apply_init(p, un, init, rng);
        let bn = p.alloc(&format!("{name}.bn"), hid, 1);
        GruCell {
            wr,
            ur,
            br,
            wz,
            uz,
            bz,
            wn,
            un,
            bn,
            in_dim,
            hid,
        }
    }

    fn step(&self, p: &Params, x: &[f64], h: &[f64]) -> (Vec<f64>, GruStepCache) {
        let hid = self.hid;
        let mut ar = vec![0.0; hid];
        let mut az = vec![0.0; hid];
        let mut an = vec![0.0; hid];
        let mut tmp = vec![0.0; hid];
        let mut un_h = vec![0.0; hid];

        matvec(p.get(self.wr), x, hid, self.in_dim, &mut ar);
        matvec(p.get(self.ur), h, hid, hid, &mut tmp);
        let br = p.get(self.br);
        for i in 0..hid {
            ar[i] += tmp[i] + br[i];
        }
        matvec(p.get(self.wz), x, hid, self.in_dim, &mut az);
        matvec(p.get(self.uz), h, hid, hid, &mut tmp);
        let bz = p.get(self.bz);
        for i in 0..hid {
            az[i] += tmp[i] + bz[i];
        }
        matvec(p.get(self.wn), x, hid, self.in_dim, &mut an);
        matvec(p.get(self.un), h, hid, hid, &mut un_h);

        let r: Vec<f64> = ar.iter().map(|&v| sigmoid(v)).collect();
        let z: Vec<f64> = az.iter().map(|&v| sigmoid(v)).collect();
        let bn = p.get(self.bn);
        let n: Vec<f64> = (0..hid)
            .map(|i| (an[i] + r[i] * un_h[i] + bn[i]).tanh())
            .collect();
        let h_next: Vec<f64> = (0..hid)
            .map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i])
            .collect();
        (
            h_next,
            GruStepCache {
                x: x.to_vec(),
                r,
                z,
                n,
                un_h,
            },
        )
    }

    pub fn forward_seq(&self, p: &Params, h0: &[f64], xs: &[Vec<f64>]) -> GruTrace {
        debug_assert_eq!(h0.len(), self.hid);
        let mut hs = Vec::with_capacity(xs.len() + 1);
        let mut steps = Vec::with_capacity(xs.len());
        hs.push(h0.to_vec());
        for x in xs {
            let (h, cache) = self.step(p, x, hs.last().unwrap());
            hs.push(h);
            steps.push(cache);
        }
        GruTrace { hs, steps }
    }

    /// Exact backpropagation through time for a gradient `dh_last` on the
    /// final hidden state. Accumulates parameter gradients and returns the
    /// per-step input gradients and the initial-state gradient.
    pub fn backward_seq(
        &self,
        p: &mut Params,
        trace: &GruTrace,
        dh_last: &[f64],
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let hid = self.hid;
        debug_assert_eq!(dh_last.len(), hid);
        let mut dh = dh_last.to_vec();
        let mut dxs = vec![vec![0.0; self.in_dim]; trace.steps.len()];
        for t in (0..trace.steps.len()).rev() {
            let cache = &trace.steps[t];
            let h_prev = &trace.hs[t];
            let mut dar = vec![0.0; hid];
            let mut daz = vec![0.0; hid];
            let mut dan = vec![0.0; hid];
            let mut dh_prev = vec![0.0; hid];
            for i in 0..hid {
                let (r, z, n) = (cache.r[i], cache.z[i], cache.n[i]);
                let g = dh[i];
                let dz = g * (h_prev[i] - n);
                let dn = g * (1.0 - z);
                dh_prev[i] = g * z;
                let da = dn * (1.0 - n * n);
                dan[i] = da;
                dar[i] = da * cache.un_h[i] * r * (1.0 - r);
                daz[i] = dz * z * (1.0 - z);
            }
            // d(Un h) = dan ⊙ r feeds both Un and h_prev.
            let dun_h: Vec<f64> = (0..hid).map(|i| dan[i] * cache.r[i]).collect();

            let (data, grad) = p.data_and_grad_mut();
            let mut acc_mat = |id: ParamId, dy: &[f64], x: &[f64]| {
                let cols = id.cols;
                for r in 0..id.rows {
                    let row = id.offset + r * cols;
                    let g = dy[r];
                    for c in 0..cols {
                        grad[row + c] += g * x[c];
                    }
                }
            };
            acc_mat(self.wr, &dar, &cache.x);
            acc_mat(self.ur, &dar, h_prev);
            acc_mat(self.wz, &daz, &cache.x);
            acc_mat(self.uz, &daz, h_prev);
            acc_mat(self.wn, &dan, &cache.x);
            acc_mat(self.un, &dun_h, h_prev);
            for i in 0..hid {
                grad[self.br.offset + i] += dar[i];
                grad[self.bz.offset + i] += daz[i];
                grad[self.bn.offset + i] += dan[i];
            }

            let acc_vecmat = |id: ParamId, dy: &[f64], out: &mut [f64]| {
                // out += Wᵀ dy
                let cols = id.cols;
                for r in 0..id.rows {
                    let row = id.offset + r * cols;
                    let g = dy[r];
                    for c in 0..cols {
                        out[c] += data[row + c] * g;
                    }
                }
            };
            acc_vecmat(self.ur, &dar, &mut dh_prev);
            acc_vecmat(self.uz, &daz, &mut dh_prev);
            acc_vecmat(self.un, &dun_h, &mut dh_prev);
            acc_vecmat(self.wr, &dar, &mut dxs[t]);
            acc_vecmat(self.wz, &daz, &mut dxs[t]);
            acc_vecmat(self.wn, &dan, &mut dxs[t]);
            dh = dh_prev;
        }
        (dxs, dh)
    }
}

/// Adam optimizer over one flat parameter store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, p: &mut Params) {
        if self.m.len() != p.len() {
            assert!(self.m.is_empty(), "parameter count changed under Adam");
            self.m = vec![0.0; p.len()];
            self.v = vec![0.0; p.len()];
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..p.data.len() {
            let g = p.grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            p.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    /// Central finite-difference check of d loss / d data[i] for every
    /// parameter against `analytic`.
    fn fd_check(p: &mut Params, analytic: &[f64], loss: &mut dyn FnMut(&Params) -> f64) {
        let eps = 1e-5;
        for i in 0..p.data.len() {
            let orig = p.data[i];
            p.data[i] = orig + eps;
            let hi = loss(p);
            p.data[i] = orig - eps;
            let lo = loss(p);
            p.data[i] = orig;
            let fd = (hi - lo) / (2.0 * eps);
            let a = analytic[i];
            let denom = 1.0_f64.max(a.abs()).max(fd.abs());
            assert!(
                (a - fd).abs() / denom < 1e-4,
                "param {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn matvec_example() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let x = [1.0, 0.5, -1.0];
        let mut y = [0.0; 2];
        matvec(&w, &x, 2, 3, &mut y);
        assert_abs_diff_eq!(y[0], 1.0 + 1.0 - 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], 4.0 + 2.5 - 6.0, epsilon = 1e-15);
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = stream(41, "nn-linear", 0, 0);
        let mut p = Params::new();
        let lin = Linear::new(&mut p, &mut rng, "lin", 4, 3, Init::Orthogonal { gain: 1.0 });
        let mut x = vec![0.0; 4];
        crate::rng::fill_standard_normal(&mut rng, &mut x);
        // Loss: 0.5 Σ y². Gradient dy = y.
        p.zero_grad();
        let y = lin.forward(&p, &x);
        let mut dx = vec![0.0; 4];
        lin.backward(&mut p, &x, &y, Some(&mut dx));
        let analytic = p.grad.clone();
        fd_check(&mut p, &analytic, &mut |p| {
            lin.forward(p, &x).iter().map(|v| 0.5 * v * v).sum()
        });
        // Input gradient by the same finite differences.
        let eps = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += eps;
            let hi: f64 = lin.forward(&p, &xp).iter().map(|v| 0.5 * v * v).sum();
            xp[i] = x[i] - eps;
            let lo: f64 = lin.forward(&p, &xp).iter().map(|v| 0.5 * v * v).sum();
            let fd = (hi - lo) / (2.0 * eps);
            assert!((dx[i] - fd).abs() < 1e-6, "dx[{i}]: {} vs {fd}", dx[i]);
        }
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = stream(43, "nn-gru", 0, 0);
        let mut p = Params::new();
        let gru = GruCell::new(&mut p, &mut rng, "gru", 3, 4, Init::Orthogonal { gain: 1.0 });
        let mut h0 = vec![0.0; 4];
        crate::rng::fill_standard_normal(&mut rng, &mut h0);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let mut x = vec![0.0; 3];
                crate::rng::fill_standard_normal(&mut rng, &mut x);
                x
            })
            .collect();
        let mut weights = vec![0.0; 4];
        crate::rng::fill_standard_normal(&mut rng, &mut weights);

        // Loss: Σ w ⊙ tanh(h_T) — nonlinear in the final state so second
        // derivatives are exercised too.
        let loss = |p: &Params| -> f64 {
            let trace = gru.forward_seq(p, &h0, &xs);
            trace
                .last()
                .iter()
                .zip(&weights)
                .map(|(h, w)| w * h.tanh())
                .sum()
        };

        p.zero_grad();
        let trace = gru.forward_seq(&p, &h0, &xs);
        let dh: Vec<f64> = trace
            .last()
            .iter()
            .zip(&weights)
            .map(|(h, w)| w * (1.0 - h.tanh() * h.tanh()))
            .collect();
        let (dxs, dh0) = gru.backward_seq(&mut p, &trace, &dh);
        let analytic = p.grad.clone();
        fd_check(&mut p, &analytic, &mut |p| loss(p));

        // h0 and input gradients against finite differences.
        let eps = 1e-5;
        for i in 0..h0.len() {
            let mut hp = h0.clone();
            hp[i] += eps;
            let hi = {
                let t = gru.forward_seq(&p, &hp, &xs);
                t.last().iter().zip(&weights).map(|(h, w)| w * h.tanh()).sum::<f64>()
            };
            hp[i] = h0[i] - eps;
            let lo = {
                let t = gru.forward_seq(&p, &hp, &xs);
                t.last().iter().zip(&weights).map(|(h, w)| w * h.tanh()).sum::<f64>()
            };
            let fd = (hi - lo) / (2.0 * eps);
            assert!((dh0[i] - fd).abs() < 1e-6, "dh0[{i}]: {} vs {fd}", dh0[i]);
        }
        for t in 0..xs.len() {
            for i in 0..3 {
                let mut xp = xs.clone();
                xp[t][i] += eps;
                let hi = {
                    let tr = gru.forward_seq(&p, &h0, &xp);
                    tr.last().iter().zip(&weights).map(|(h, w)| w * h.tanh()).sum::<f64>()
                };
                xp[t][i] = xs[t][i] - eps;
                let lo = {
                    let tr = gru.forward_seq(&p, &h0, &xp);
                    tr.last().iter().zip(&weights).map(|(h, w)| w * h.tanh()).sum::<f64>()
                };
                let fd = (hi - lo) / (2.0 * eps);
                assert!(
                    (dxs[t][i] - fd).abs() < 1e-6,
                    "dx[{t}][{i}]: {} vs {fd}",
                    dxs[t][i]
                );
            }
        }
    }

    #[test]
    fn orthogonal_init_properties() {
        let mut rng = stream(47, "nn-ortho", 0, 0);
        // Wide: rows ≤ cols ⇒ W Wᵀ = gain² I.
        let (rows, cols, gain) = (4, 7, 1.3);
        let mut w = vec![0.0; rows * cols];
        orthogonal(&mut rng, rows, cols, gain, &mut w);
        for a in 0..rows {
            for b in 0..rows {
                let dot: f64 = (0..cols).map(|c| w[a * cols + c] * w[b * cols + c]).sum();
                let want = if a == b { gain * gain } else { 0.0 };
                assert_abs_diff_eq!(dot, want, epsilon = 1e-9);
            }
        }
        // Tall: cols ≤ rows ⇒ Wᵀ W = gain² I.
        let (rows, cols) = (6, 2);
        let mut w = vec![0.0; rows * cols];
        orthogonal(&mut rng, rows, cols, 1.0, &mut w);
        for a in 0..cols {
            for b in 0..cols {
                let dot: f64 = (0..rows).map(|r| w[r * cols + a] * w[r * cols + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, want, epsilon = 1e-9);
            }
        }
        // Determinism: the same stream reproduces the same matrix.
        let mut r1 = stream(47, "nn-ortho", 0, 0);
        let mut r2 = stream(47, "nn-ortho", 0, 0);
        let mut w1 = vec![0.0; 12];
        let mut w2 = vec![0.0; 12];
        orthogonal(&mut r1, 3, 4, 1.0, &mut w1);
        orthogonal(&mut r2, 3, 4, 1.0, &mut w2);
        assert_eq!(w1, w2);
    }

    #[test]
    fn clip_rescales_to_the_global_norm() {
        let mut p = Params::new();
        let id = p.alloc("g", 2, 1);
        let _ = id;
        p.grad.copy_from_slice(&[3.0, 4.0]);
        let pre = p.clip_grad_norm(1.0);
        assert_abs_diff_eq!(pre, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.grad[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(p.grad[1], 0.8, epsilon = 1e-12);
        // Below the cap nothing changes.
        let pre = p.clip_grad_norm(10.0);
        assert_abs_diff_eq!(pre, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.grad[0], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn adam_two_steps_hand_computed() {
        let mut p = Params::new();
        p.alloc("x", 1, 1);
        p.data[0] = 1.0;
        let mut opt = Adam::new(0.1);
        // Step 1 with gradient 1.
        p.grad[0] = 1.0;
        opt.step(&mut p);
        // m̂ = v̂ = 1 exactly after bias correction.
        let want1 = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert_abs_diff_eq!(p.data[0], want1, epsilon = 1e-15);
        // Step 2 with gradient −1.
        p.grad[0] = -1.0;
        opt.step(&mut p);
        let m2 = 0.9 * 0.1 + 0.1 * (-1.0);
        let v2 = 0.999 * 0.001 + 0.001;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.999_f64.powi(2));
        let want2 = want1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert_abs_diff_eq!(p.data[0], want2, epsilon = 1e-15);
    }

    #[test]
    fn params_save_load_roundtrip() {
        let mut rng = stream(53, "nn-save", 0, 0);
        let mut p = Params::new();
        let lin = Linear::new(&mut p, &mut rng, "a", 3, 2, Init::Orthogonal { gain: 1.0 });
        let _ = lin;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        p.save(&path).unwrap();

        let mut q = Params::new();
        let mut rng2 = stream(54, "nn-save-other", 0, 0);
        Linear::new(&mut q, &mut rng2, "a", 3, 2, Init::Orthogonal { gain: 1.0 });
        assert_ne!(p.data, q.data);
        q.load(&path).unwrap();
        assert_eq!(p.data, q.data);

        // Wrong-shaped model refuses the checkpoint.
        let mut bad = Params::new();
        Linear::new(&mut bad, &mut rng2, "a", 4, 2, Init::Zeros);
        assert!(bad.load(&path).is_err());
        // Wrong names refuse too.
        let mut named = Params::new();
        Linear::new(&mut named, &mut rng2, "b", 3, 2, Init::Zeros);
        assert!(named.load(&path).is_err());
    }

    #[test]
    fn gru_forward_matches_manual_single_unit() {
        // 1-in/1-hidden cell with hand-set weights; one step computed by hand.
        let mut p = Params::new();
        let mut rng = stream(55, "nn-gru-manual", 0, 0);
        let gru = GruCell::new(&mut p, &mut rng, "g", 1, 1, Init::Zeros);
        for (id, v) in [
            (gru.wr, 0.5),
            (gru.ur, -0.3),
            (gru.br, 0.1),
            (gru.wz, -0.2),
            (gru.uz, 0.4),
            (gru.bz, -0.1),
            (gru.wn, 1.0),
            (gru.un, 0.7),
            (gru.bn, 0.2),
        ] {
            p.get_mut(id)[0] = v;
        }
        let (x, h) = (0.8, -0.5);
        let trace = gru.forward_seq(&p, &[h], &[vec![x]]);
        let r = sigmoid(0.5 * x - 0.3 * h + 0.1);
        let z = sigmoid(-0.2 * x + 0.4 * h - 0.1);
        let n = (1.0 * x + r * (0.7 * h) + 0.2).tanh();
        let want = (1.0 - z) * n + z * h;
        assert_abs_diff_eq!(trace.last()[0], want, epsilon = 1e-15);
    }
}
