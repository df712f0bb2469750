//! Independent reference implementations used by the integration tests.
//! Everything here is written as plain nested loops over `f64` with no
//! shared code from the library under test.

#![allow(dead_code)]

/// NHWC convolution, weights `[kh, kw, cin, cout]`. `same` pads so the
/// output is `ceil(h / stride)` with the smaller half of the padding on
/// the top/left.
pub fn conv2d(
    x: &[f64],
    [n, h, w, cin]: [usize; 4],
    wt: &[f64],
    [kh, kw, _, cout]: [usize; 4],
    bias: &[f64],
    stride: usize,
    same: bool,
) -> (Vec<f64>, [usize; 4]) {
    let (oh, ow, pt, pl) = if same {
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let ph = ((oh - 1) * stride + kh).saturating_sub(h);
        let pw = ((ow - 1) * stride + kw).saturating_sub(w);
        (oh, ow, ph / 2, pw / 2)
    } else {
        ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
    };
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = bias[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x[((b * h + iy as usize) * w + ix as usize) * cin + ci];
                                acc += xv * wt[((ky * kw + kx) * cin + ci) * cout + co];
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    (out, [n, oh, ow, cout])
}

/// Valid-padding max pooling.
pub fn maxpool2d(x: &[f64], [n, h, w, c]: [usize; 4], k: usize, s: usize) -> (Vec<f64>, [usize; 4]) {
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let mut out = vec![f64::NEG_INFINITY; n * oh * ow * c];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let o = &mut out[((b * oh + oy) * ow + ox) * c + ch];
                    for ky in 0..k {
                        for kx in 0..k {
                            *o = o.max(x[((b * h + oy * s + ky) * w + ox * s + kx) * c + ch]);
                        }
                    }
                }
            }
        }
    }
    (out, [n, oh, ow, c])
}

pub fn dense(x: &[f64], n: usize, din: usize, wt: &[f64], dout: usize, bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * dout];
    for i in 0..n {
        for j in 0..dout {
            out[i * dout + j] = bias[j] + (0..din).map(|k| x[i * din + k] * wt[k * dout + j]).sum::<f64>();
        }
    }
    out
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

/// Row-wise softmax written directly from the definition, shifted by the
/// row maximum.
pub fn softmax(x: &[f64], classes: usize) -> Vec<f64> {
    x.chunks(classes)
        .flat_map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            row.iter().map(move |v| (v - m).exp() / z).collect::<Vec<_>>()
        })
        .collect()
}

pub fn cross_entropy(probs: &[f64], labels: &[f64], n: usize) -> f64 {
    -probs
        .iter()
        .zip(labels)
        .map(|(p, y)| y * p.clamp(1e-7, 1.0 - 1e-7).ln())
        .sum::<f64>()
        / n as f64
}

/// Exact fraction with a positive denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frac {
    pub num: i128,
    pub den: i128,
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Frac {
    pub fn new(num: i128, den: i128) -> Self {
        assert!(den != 0);
        let g = gcd(num, den).max(1);
        let s = if den < 0 { -1 } else { 1 };
        Self {
            num: s * num / g,
            den: s * den / g,
        }
    }

    pub fn int(v: i128) -> Self {
        Self::new(v, 1)
    }

    /// `num / den`, or zero when `den == 0`.
    pub fn ratio_or_zero(num: i128, den: i128) -> Self {
        if den == 0 {
            Self::int(0)
        } else {
            Self::new(num, den)
        }
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }

    pub fn mul(self, o: Self) -> Self {
        Self::new(self.num * o.num, self.den * o.den)
    }

    pub fn div(self, o: Self) -> Self {
        Self::new(self.num * o.den, self.den * o.num)
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Per-class `(precision, recall, f1)`, macro averages of each, and
/// accuracy, all as exact fractions.
pub struct ExactMetrics {
    pub per_class: Vec<[Frac; 3]>,
    pub macro_avg: [Frac; 3],
    pub accuracy: Frac,
}

pub fn exact_metrics(counts: &[Vec<u64>]) -> ExactMetrics {
    let c = counts.len();
    let cell = |t: usize, p: usize| counts[t][p] as i128;
    let total: i128 = (0..c).flat_map(|t| (0..c).map(move |p| (t, p))).map(|(t, p)| cell(t, p)).sum();
    let mut per_class = Vec::new();
    for k in 0..c {
        let tp = cell(k, k);
        let predicted: i128 = (0..c).map(|t| cell(t, k)).sum();
        let actual: i128 = (0..c).map(|p| cell(k, p)).sum();
        let precision = Frac::ratio_or_zero(tp, predicted);
        let recall = Frac::ratio_or_zero(tp, actual);
        let sum = precision.add(recall);
        let f1 = if sum.is_zero() {
            Frac::int(0)
        } else {
            Frac::int(2).mul(precision).mul(recall).div(sum)
        };
        per_class.push([precision, recall, f1]);
    }
    let mut macro_avg = [Frac::int(0); 3];
    for m in &per_class {
        for i in 0..3 {
            macro_avg[i] = macro_avg[i].add(m[i]);
        }
    }
    let macro_avg = macro_avg.map(|v| v.div(Frac::int(c as i128)));
    let trace: i128 = (0..c).map(|k| cell(k, k)).sum();
    ExactMetrics {
        per_class,
        macro_avg,
        accuracy: Frac::new(trace, total),
    }
}
