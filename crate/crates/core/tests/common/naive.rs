//! Loop-by-loop reference implementations, written directly from the
//! defining formulas without the tensor library.
#![allow(clippy::needless_range_loop)]

use dehaze::params::ParamStore;

/// `[C,H,W]` values with their extents.
#[derive(Clone, Debug)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn at(&self, c: usize, l: usize) -> f64 {
        self.v[c * self.h * self.w + l]
    }
}

fn param<'a>(store: &'a ParamStore<f64>, name: &str) -> &'a [f64] {
    store.by_name(name).unwrap_or_else(|| panic!("missing {name}")).data()
}

/// Pointwise convolution: `out[o,l] = Σ_i w[o,i]·x[i,l] + b[o]`.
fn pointwise(x: &Map, w: &[f64], b: &[f64], out: usize) -> Map {
    let l = x.h * x.w;
    let mut v = vec![0.0; out * l];
    for o in 0..out {
        for p in 0..l {
            let mut s = b[o];
            for i in 0..x.c {
                s += w[o * x.c + i] * x.at(i, p);
            }
            v[o * l + p] = s;
        }
    }
    Map {
        c: out,
        h: x.h,
        w: x.w,
        v,
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Row-stochastic adjacency from node features `z[n][d]`.
pub fn adjacency(z: &[Vec<f64>], theta: &[f64], theta_p: &[f64]) -> Vec<Vec<f64>> {
    let d = z[0].len();
    let embed =
        |row: &[f64], m: &[f64]| -> Vec<f64> { (0..d).map(|k| (0..d).map(|j| row[j] * m[j * d + k]).sum()).collect() };
    let left: Vec<Vec<f64>> = z.iter().map(|r| embed(r, theta)).collect();
    let right: Vec<Vec<f64>> = z.iter().map(|r| embed(r, theta_p)).collect();
    left.iter()
        .map(|li| {
            let logits: Vec<f64> = right
                .iter()
                .map(|rj| li.iter().zip(rj).map(|(a, b)| a * b).sum())
                .collect();
            softmax(&logits)
        })
        .collect()
}

/// `ReLU(A·Z·W)`.
pub fn reason(a: &[Vec<f64>], z: &[Vec<f64>], w: &[f64]) -> Vec<Vec<f64>> {
    let n = z.len();
    let d = z[0].len();
    (0..n)
        .map(|i| {
            let az: Vec<f64> = (0..d).map(|k| (0..n).map(|j| a[i][j] * z[j][k]).sum()).collect();
            (0..d)
                .map(|k| (0..d).map(|j| az[j] * w[j * d + k]).sum::<f64>().max(0.0))
                .collect()
        })
        .collect()
}

pub struct SgrParts {
    pub b: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub out: Vec<f64>,
}

/// Spatial reasoning with grid side `q`; parameters under `prefix`.
pub fn sgr(store: &ParamStore<f64>, prefix: &str, x: &Map, q: usize) -> SgrParts {
    let p = |s: &str| param(store, &format!("{prefix}.{s}"));
    let c = x.c;
    let l = x.h * x.w;
    let n = q * q;
    let emb = pointwise(x, p("phi.weight"), p("phi.bias"), c);
    let k = pointwise(x, p("psi.weight"), p("psi.bias"), c);
    let (ch, cw) = (x.h / q, x.w / q);
    // Anchor for cell (gy, gx), numbered gy*q + gx.
    let mut anchors = vec![vec![0.0; c]; n];
    for gy in 0..q {
        for gx in 0..q {
            for ch_i in 0..c {
                let mut s = 0.0;
                for y in gy * ch..(gy + 1) * ch {
                    for xx in gx * cw..(gx + 1) * cw {
                        s += emb.at(ch_i, y * x.w + xx);
                    }
                }
                anchors[gy * q + gx][ch_i] = s / (ch * cw) as f64;
            }
        }
    }
    let mut b = vec![vec![0.0; l]; n];
    for pix in 0..l {
        let logits: Vec<f64> = (0..n)
            .map(|node| (0..c).map(|ci| anchors[node][ci] * emb.at(ci, pix)).sum())
            .collect();
        for (node, s) in softmax(&logits).into_iter().enumerate() {
            b[node][pix] = s;
        }
    }
    let z: Vec<Vec<f64>> = (0..n)
        .map(|node| {
            (0..c)
                .map(|ci| (0..l).map(|pix| b[node][pix] * k.at(ci, pix)).sum())
                .collect()
        })
        .collect();
    let a = adjacency(&z, p("theta"), p("theta_prime"));
    let v = reason(&a, &z, p("weight"));
    let mut out = x.v.clone();
    for ci in 0..c {
        for pix in 0..l {
            out[ci * l + pix] += (0..n).map(|node| b[node][pix] * v[node][ci]).sum::<f64>();
        }
    }
    SgrParts { b, z, a, v, out }
}

pub struct CgrParts {
    pub z: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub out: Vec<f64>,
}

/// Channel reasoning with `n` nodes pooled to `m × m`.
pub fn cgr(store: &ParamStore<f64>, prefix: &str, x: &Map, n: usize, m: usize) -> CgrParts {
    let p = |s: &str| param(store, &format!("{prefix}.{s}"));
    let l = x.h * x.w;
    let s_dim = m * m;
    let maps = pointwise(x, p("node_conv.weight"), p("node_conv.bias"), n);
    let (ch, cw) = (x.h / m, x.w / m);
    let mut z = vec![vec![0.0; s_dim]; n];
    for node in 0..n {
        for gy in 0..m {
            for gx in 0..m {
                let mut s = 0.0;
                for y in gy * ch..(gy + 1) * ch {
                    for xx in gx * cw..(gx + 1) * cw {
                        s += maps.at(node, y * x.w + xx);
                    }
                }
                z[node][gy * m + gx] = s / (ch * cw) as f64;
            }
        }
    }
    let a = adjacency(&z, p("theta"), p("theta_prime"));
    let v = reason(&a, &z, p("weight"));
    let d = pointwise(x, p("delta.weight"), p("delta.bias"), s_dim);
    // y[node][pix] = Σ_s d[s,pix]·v[node][s]
    let y = Map {
        c: n,
        h: x.h,
        w: x.w,
        v: (0..n)
            .flat_map(|node| {
                let v = &v;
                let d = &d;
                (0..l).map(move |pix| (0..s_dim).map(|s| d.at(s, pix) * v[node][s]).sum())
            })
            .collect(),
    };
    let r = pointwise(&y, p("xi.weight"), p("xi.bias"), x.c);
    let out = x.v.iter().zip(&r.v).map(|(a, b)| a + b).collect();
    CgrParts { z, a, v, out }
}

/// `10·log10(1/MSE)`.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

/// Mean SSIM over valid `win × win` Gaussian windows, averaged over channels.
pub fn ssim(a: &Map, b: &Map, win: usize, sigma: f64) -> f64 {
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let half = (win / 2) as f64;
    let mut k = vec![0.0; win * win];
    for i in 0..win {
        for j in 0..win {
            let r2 = (i as f64 - half).powi(2) + (j as f64 - half).powi(2);
            k[i * win + j] = (-r2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let (oh, ow) = (a.h - win + 1, a.w - win + 1);
    let mut acc = 0.0;
    for c in 0..a.c {
        for y in 0..oh {
            for x in 0..ow {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        let w = k[i * win + j];
                        let pa = a.at(c, (y + i) * a.w + x + j);
                        let pb = b.at(c, (y + i) * b.w + x + j);
                        ma += w * pa;
                        mb += w * pb;
                        aa += w * pa * pa;
                        bb += w * pb * pb;
                        ab += w * pa * pb;
                    }
                }
                let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    acc / (a.c * oh * ow) as f64
}
