//! Two-conv, two-FC patch classifier with hand-written backpropagation.
//!
//! Layer stack: conv (valid, stride 1) -> 2x2 max-pool -> conv -> 2x2
//! max-pool -> flatten (channel, row, column) -> FC + ReLU -> FC(2) ->
//! softmax. All parameters live in one flat `Vec<f64>` so that gradients,
//! updates and serialization share a layout.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CnnError;

/// Layer sizes. `input` is the square patch side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input: usize,
    pub kernel: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

pub const CLASSES: usize = 2;

impl Architecture {
    /// 75x75 patches, 5x5 kernels, 6 and 12 filters, 128 hidden units.
    pub const STANDARD: Architecture = Architecture { input: 75, kernel: 5, conv1: 6, conv2: 12, hidden: 128 };

    /// Spatial sides after conv1, pool1, conv2, pool2.
    pub fn sides(&self) -> [usize; 4] {
        let c1 = self.input + 1 - self.kernel;
        let p1 = c1 / 2;
        let c2 = p1 + 1 - self.kernel;
        [c1, p1, c2, c2 / 2]
    }

    pub fn flat(&self) -> usize {
        let p2 = self.sides()[3];
        self.conv2 * p2 * p2
    }

    pub fn validate(&self) -> Result<(), CnnError> {
        let ok = self.kernel >= 1
            && self.input >= self.kernel
            && self.conv1 > 0
            && self.conv2 > 0
            && self.hidden > 0
            && {
                let [c1, p1, _, _] = self.sides();
                c1 >= 2 && p1 >= self.kernel
            }
            && self.sides()[3] >= 1;
        if ok {
            Ok(())
        } else {
            Err(CnnError::ShapeMismatch(format!("unusable architecture {self:?}")))
        }
    }

    fn k2(&self) -> usize {
        self.kernel * self.kernel
    }

    pub(crate) fn layout(&self) -> Layout {
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let w1 = take(self.conv1 * self.k2());
        let b1 = take(self.conv1);
        let w2 = take(self.conv2 * self.conv1 * self.k2());
        let b2 = take(self.conv2);
        let w3 = take(self.hidden * self.flat());
        let b3 = take(self.hidden);
        let w4 = take(CLASSES * self.hidden);
        let b4 = take(CLASSES);
        Layout { w1, b1, w2, b2, w3, b3, w4, b4, total: off }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Parameter ranges inside the flat vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub w1: std::ops::Range<usize>,
    pub b1: std::ops::Range<usize>,
    pub w2: std::ops::Range<usize>,
    pub b2: std::ops::Range<usize>,
    pub w3: std::ops::Range<usize>,
    pub b3: std::ops::Range<usize>,
    pub w4: std::ops::Range<usize>,
    pub b4: std::ops::Range<usize>,
    pub total: usize,
}

/// Which layer a flat parameter index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1,
    Conv2,
    Hidden,
    Output,
}

/// Model weights plus the input normalization constant.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    arch: Architecture,
    /// Training-set mean intensity on the [0, 1] scale.
    pub input_mean: f64,
    params: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
pub(crate) struct Trace {
    a1: Vec<f64>,
    p1: Vec<f64>,
    arg1: Vec<u32>,
    arg2: Vec<u32>,
    p2: Vec<f64>,
    h: Vec<f64>,
    pub probs: [f64; CLASSES],
    pub logits: [f64; CLASSES],
}

/// `out[o][y][x] = bias[o] + sum_c sum_ky sum_kx w[o][c][ky][kx] * inp[c][y+ky][x+kx]`
/// over an `in_side` input, accumulating in (c, ky, kx) order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_valid(
    inp: &[f64],
    channels: usize,
    in_w: usize,
    in_h: usize,
    w: &[f64],
    b: &[f64],
    k: usize,
    out: &mut [f64],
) {
    let (ow, oh) = (in_w + 1 - k, in_h + 1 - k);
    let outs = b.len();
    for o in 0..outs {
        let plane = &mut out[o * ow * oh..(o + 1) * ow * oh];
        plane.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..channels {
            let src = &inp[c * in_w * in_h..(c + 1) * in_w * in_h];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((o * channels + c) * k + ky) * k + kx];
                    for y in 0..oh {
                        let row = &src[(y + ky) * in_w + kx..(y + ky) * in_w + kx + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(row) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max-pool, stride 2, floor. Ties go to the first of (0,0), (0,1),
/// (1,0), (1,1). Returns argmax flat indices into `inp`.
fn max_pool(inp: &[f64], channels: usize, side: usize, out: &mut [f64], arg: &mut [u32]) {
    let ps = side / 2;
    for c in 0..channels {
        let base = c * side * side;
        for y in 0..ps {
            for x in 0..ps {
                let mut best = base + 2 * y * side + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * side + 2 * x + dx;
                    if inp[i] > inp[best] {
                        best = i;
                    }
                }
                let o = c * ps * ps + y * ps + x;
                out[o] = inp[best];
                arg[o] = best as u32;
            }
        }
    }
}

pub(crate) fn softmax(z: [f64; CLASSES]) -> [f64; CLASSES] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// `-log softmax(z)[label]`, computed stably.
pub(crate) fn cross_entropy(z: [f64; CLASSES], label: usize) -> f64 {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[label]
}

impl CnnModel {
    /// Fan-in scaled uniform init in `+-sqrt(6 / fan_in)`, biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, CnnError> {
        arch.validate()?;
        let l = arch.layout();
        let mut params = vec![0.0; l.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = arch.k2();
        for (range, fan_in) in [
            (l.w1.clone(), k2),
            (l.w2.clone(), arch.conv1 * k2),
            (l.w3.clone(), arch.flat()),
            (l.w4.clone(), arch.hidden),
        ] {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self { arch, input_mean: 0.0, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self, CnnError> {
        arch.validate()?;
        Ok(Self { arch, input_mean: 0.0, params: vec![0.0; arch.param_count()] })
    }

    pub fn from_params(arch: Architecture, input_mean: f64, params: Vec<f64>) -> Result<Self, CnnError> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(CnnError::ShapeMismatch(format!(
                "{} parameters for an architecture needing {}",
                params.len(),
                arch.param_count()
            )));
        }
        Ok(Self { arch, input_mean, params })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layer_of(&self, index: usize) -> LayerKind {
        let l = self.arch.layout();
        if index < l.b1.end {
            LayerKind::Conv1
        } else if index < l.b2.end {
            LayerKind::Conv2
        } else if index < l.b3.end {
            LayerKind::Hidden
        } else {
            LayerKind::Output
        }
    }

    /// Scales 8-bit pixels to [0, 1] and subtracts the training mean.
    pub fn normalize(&self, pixels: &[u8]) -> Vec<f64> {
        pixels.iter().map(|&v| v as f64 / 255.0 - self.input_mean).collect()
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Result<Trace, CnnError> {
        let a = self.arch;
        if x.len() != a.input * a.input {
            return Err(CnnError::ShapeMismatch(format!(
                "patch has {} values, expected {}x{}",
                x.len(),
                a.input,
                a.input
            )));
        }
        let l = a.layout();
        let p = &self.params;
        let [s1, q1, s2, q2] = a.sides();
        let mut a1 = vec![0.0; a.conv1 * s1 * s1];
        conv_valid(x, 1, a.input, a.input, &p[l.w1.clone()], &p[l.b1.clone()], a.kernel, &mut a1);
        let mut p1 = vec![0.0; a.conv1 * q1 * q1];
        let mut arg1 = vec![0u32; p1.len()];
        max_pool(&a1, a.conv1, s1, &mut p1, &mut arg1);
        let mut a2 = vec![0.0; a.conv2 * s2 * s2];
        conv_valid(&p1, a.conv1, q1, q1, &p[l.w2.clone()], &p[l.b2.clone()], a.kernel, &mut a2);
        let mut p2 = vec![0.0; a.conv2 * q2 * q2];
        let mut arg2 = vec![0u32; p2.len()];
        max_pool(&a2, a.conv2, s2, &mut p2, &mut arg2);
        let (h, logits) = self.head(&p2);
        Ok(Trace { a1, p1, arg1, arg2, probs: softmax(logits), p2, h, logits })
    }

    /// Fully connected part: flattened pooled features -> (ReLU hidden, logits).
    pub(crate) fn head(&self, feat: &[f64]) -> (Vec<f64>, [f64; CLASSES]) {
        let a = self.arch;
        let l = a.layout();
        let p = &self.params;
        let n = a.flat();
        let w3 = &p[l.w3.clone()];
        let h: Vec<f64> = (0..a.hidden)
            .map(|j| {
                let row = &w3[j * n..(j + 1) * n];
                let s = row.iter().zip(feat).fold(p[l.b3.start + j], |acc, (w, f)| acc + w * f);
                s.max(0.0)
            })
            .collect();
        let w4 = &p[l.w4.clone()];
        let mut z = [0.0; CLASSES];
        for (k, zk) in z.iter_mut().enumerate() {
            let row = &w4[k * a.hidden..(k + 1) * a.hidden];
            *zk = row.iter().zip(&h).fold(p[l.b4.start + k], |acc, (w, v)| acc + w * v);
        }
        (h, z)
    }

    /// Class probabilities `(p_negative, p_positive)` for a normalized patch.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, f64), CnnError> {
        let t = self.trace(x)?;
        Ok((t.probs[0], t.probs[1]))
    }

    /// Cross-entropy loss of one sample.
    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64, CnnError> {
        Ok(cross_entropy(self.trace(x)?.logits, label))
    }

    /// Adds d(loss)/d(params) * `scale` for one sample into `grad`; returns
    /// the loss and the predicted class.
    pub(crate) fn accumulate_gradient(
        &self,
        x: &[f64],
        label: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<(f64, usize), CnnError> {
        let a = self.arch;
        let l = a.layout();
        let p = &self.params;
        let t = self.trace(x)?;
        let loss = cross_entropy(t.logits, label);
        let predicted = usize::from(t.probs[1] > t.probs[0]);
        let [s1, q1, s2, _] = a.sides();
        let k = a.kernel;

        // softmax + cross-entropy
        let mut dz = t.probs;
        dz[label] -= 1.0;
        dz.iter_mut().for_each(|d| *d *= scale);

        // output layer
        let mut dh = vec![0.0; a.hidden];
        for c in 0..CLASSES {
            grad[l.b4.start + c] += dz[c];
            let off = l.w4.start + c * a.hidden;
            for j in 0..a.hidden {
                grad[off + j] += dz[c] * t.h[j];
                dh[j] += p[off + j] * dz[c];
            }
        }
        // hidden layer (ReLU)
        let n = a.flat();
        let mut dp2 = vec![0.0; n];
        for j in 0..a.hidden {
            if t.h[j] <= 0.0 {
                continue;
            }
            let g = dh[j];
            grad[l.b3.start + j] += g;
            let off = l.w3.start + j * n;
            let (gw, w) = (&mut grad[off..off + n], &p[off..off + n]);
            for i in 0..n {
                gw[i] += g * t.p2[i];
                dp2[i] += w[i] * g;
            }
        }
        // pool2 -> conv2
        let mut da2 = vec![0.0; a.conv2 * s2 * s2];
        for (i, &src) in t.arg2.iter().enumerate() {
            da2[src as usize] += dp2[i];
        }
        let mut dp1 = vec![0.0; t.p1.len()];
        for o in 0..a.conv2 {
            let plane = &da2[o * s2 * s2..(o + 1) * s2 * s2];
            grad[l.b2.start + o] += plane.iter().sum::<f64>();
            for c in 0..a.conv1 {
                let src = &t.p1[c * q1 * q1..(c + 1) * q1 * q1];
                let dsrc_off = c * q1 * q1;
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = ((o * a.conv1 + c) * k + ky) * k + kx;
                        let wv = p[l.w2.start + wi];
                        let mut gw = 0.0;
                        for y in 0..s2 {
                            let row = (y + ky) * q1 + kx;
                            let d = &plane[y * s2..(y + 1) * s2];
                            for (x, &dv) in d.iter().enumerate() {
                                gw += dv * src[row + x];
                                dp1[dsrc_off + row + x] += wv * dv;
                            }
                        }
                        grad[l.w2.start + wi] += gw;
                    }
                }
            }
        }
        // pool1 -> conv1
        let mut da1 = vec![0.0; t.a1.len()];
        for (i, &src) in t.arg1.iter().enumerate() {
            da1[src as usize] += dp1[i];
        }
        for o in 0..a.conv1 {
            let plane = &da1[o * s1 * s1..(o + 1) * s1 * s1];
            grad[l.b1.start + o] += plane.iter().sum::<f64>();
            for ky in 0..k {
                for kx in 0..k {
                    let mut gw = 0.0;
                    for y in 0..s1 {
                        let row = (y + ky) * a.input + kx;
                        for (xx, &dv) in plane[y * s1..(y + 1) * s1].iter().enumerate() {
                            gw += dv * x[row + xx];
                        }
                    }
                    grad[l.w1.start + (o * k + ky) * k + kx] += gw;
                }
            }
        }
        Ok((loss, predicted))
    }

    const MAGIC: &'static [u8; 8] = b"NUCLCNN\0";
    const VERSION: u32 = 1;

    /// Binary model file, all integers and reals little-endian:
    ///
    /// ```text
    /// 8 bytes  magic "NUCLCNN\0"
    /// u32      format version (1)
    /// u32 x 5  input side, kernel side, conv1 filters, conv2 filters, hidden units
    /// u32      classes (2)
    /// f64      input mean
    /// u64      parameter count
    /// f64 x n  parameters: conv1 w [f][ky][kx], conv1 b, conv2 w [f][c][ky][kx],
    ///          conv2 b, hidden w [unit][feature], hidden b, output w [class][unit], output b
    /// ```
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        let a = self.arch;
        for v in [a.input, a.kernel, a.conv1, a.conv2, a.hidden, CLASSES] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&self.input_mean.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(64 + 8 * self.params.len());
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CnnError> {
        let bad = |m: &str| CnnError::ModelFormat(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != Self::MAGIC {
            return Err(bad("not a model file"));
        }
        let mut u32s = [0u32; 7];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *v = u32::from_le_bytes(b);
        }
        if u32s[0] != Self::VERSION {
            return Err(bad(&format!("unsupported version {}", u32s[0])));
        }
        if u32s[6] as usize != CLASSES {
            return Err(bad("only two-class models are supported"));
        }
        let arch = Architecture {
            input: u32s[1] as usize,
            kernel: u32s[2] as usize,
            conv1: u32s[3] as usize,
            conv2: u32s[4] as usize,
            hidden: u32s[5] as usize,
        };
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let input_mean = f64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let n = u64::from_le_bytes(b8) as usize;
        arch.validate().map_err(|_| bad("invalid architecture in header"))?;
        if n != arch.param_count() {
            return Err(bad("parameter count does not match architecture"));
        }
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8).map_err(|_| bad("truncated parameters"))?;
            params.push(f64::from_le_bytes(b8));
        }
        if r.read(&mut [0u8; 1]).map_err(|_| bad("read error"))? != 0 {
            return Err(bad("trailing bytes after parameters"));
        }
        Self::from_params(arch, input_mean, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_shape_chain() {
        assert_eq!(Architecture::STANDARD.sides(), [71, 35, 31, 15]);
        assert_eq!(Architecture::STANDARD.flat(), 2700);
        assert_eq!(
            Architecture::STANDARD.param_count(),
            6 * 25 + 6 + 12 * 6 * 25 + 12 + 2700 * 128 + 128 + 2 * 128 + 2
        );
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = CnnModel::zeros(Architecture::STANDARD).unwrap();
        let x = vec![0.3; 75 * 75];
        assert_eq!(m.forward(&x).unwrap(), (0.5, 0.5));
        assert!(matches!(m.forward(&[0.0; 10]), Err(CnnError::ShapeMismatch(_))));
    }

    #[test]
    fn miniature_matches_scalar_trace() {
        // 7x7 input, 2x2 kernels, one filter per conv, one hidden unit:
        // 7 -> conv 6 -> pool 3 -> conv 2 -> pool 1.
        let arch = Architecture { input: 7, kernel: 2, conv1: 1, conv2: 1, hidden: 1 };
        let mut m = CnnModel::zeros(arch).unwrap();
        // w1(4) b1 w2(4) b2 w3(1) b3 w4(2) b4(2)
        let params = [
            1.0, -1.0, 0.5, 0.25, 0.1, // conv1
            0.5, 0.5, -0.5, 1.0, -0.2, // conv2
            2.0, 0.3, // hidden
            1.5, -0.5, 0.05, -0.05, // output
        ];
        m.params_mut().copy_from_slice(&params);
        let x: Vec<f64> = (0..49).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let px = |r: usize, c: usize| x[r * 7 + c];

        let mut a1 = [[0.0; 6]; 6];
        #[allow(clippy::needless_range_loop)]
        for r in 0..6 {
            for c in 0..6 {
                a1[r][c] = 0.1 + px(r, c) - px(r, c + 1) + 0.5 * px(r + 1, c) + 0.25 * px(r + 1, c + 1);
            }
        }
        let mut p1 = [[0.0f64; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                p1[r][c] =
                    a1[2 * r][2 * c].max(a1[2 * r][2 * c + 1]).max(a1[2 * r + 1][2 * c]).max(a1[2 * r + 1][2 * c + 1]);
            }
        }
        let mut a2 = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                a2[r][c] = -0.2 + 0.5 * p1[r][c] + 0.5 * p1[r][c + 1] - 0.5 * p1[r + 1][c] + p1[r + 1][c + 1];
            }
        }
        let p2 = a2[0][0].max(a2[0][1]).max(a2[1][0]).max(a2[1][1]);
        let h = (2.0 * p2 + 0.3).max(0.0);
        let z0 = 1.5 * h + 0.05;
        let z1 = -0.5 * h - 0.05;
        let pos = 1.0 / (1.0 + (z0 - z1).exp());

        let (pn, pp) = m.forward(&x).unwrap();
        assert!((pp - pos).abs() < 1e-12, "{pp} vs {pos}");
        assert!((pn + pp - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_file_round_trip() {
        let mut m = CnnModel::init(Architecture { input: 15, kernel: 3, conv1: 2, conv2: 3, hidden: 4 }, 7).unwrap();
        m.input_mean = 0.4321;
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], b"NUCLCNN\0");
        let back = CnnModel::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(CnnModel::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(CnnModel::read_from(extra.as_slice()).is_err());
        assert!(CnnModel::read_from(&b"garbage!"[..]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = CnnModel::init(Architecture::STANDARD, 1).unwrap();
        let b = CnnModel::init(Architecture::STANDARD, 1).unwrap();
        let c = CnnModel::init(Architecture::STANDARD, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let l = Architecture::STANDARD.layout();
        let bound = (6.0f64 / 25.0).sqrt();
        assert!(a.params()[l.w1.clone()].iter().all(|w| w.abs() < bound));
        assert!(a.params()[l.b3.clone()].iter().all(|&w| w == 0.0));
    }
}
