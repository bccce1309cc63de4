//! Brute-force reference implementations, written independently of the
//! library kernels.

use bgrl::bgnn::{BgnnConfig, BgnnModel, WeightMode};
use bgrl::eval::{confusion, metrics};
use bgrl::graph::{BipartiteSubgraph, Gene};
use bgrl::ops;
use bgrl::Tensor;
use rand::Rng;

use super::cases::micro_graphs;
use super::{rng, uniform};

pub const ORACLE_TOL: f64 = 1e-12;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn matmul_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(&[i, p]) * b.get(&[p, j]);
            }
            c[i * n + j] = s;
        }
    }
    c
}

pub fn conv3d_oracle(x: &Tensor, k: &Tensor, pad: usize) -> Vec<f64> {
    let s = x.shape();
    let (n, cin, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let (cout, ks) = (k.shape()[0], k.shape()[2]);
    let (od, oh, ow) = (
        d + 2 * pad + 1 - ks,
        h + 2 * pad + 1 - ks,
        w + 2 * pad + 1 - ks,
    );
    let at = |b: usize, c: usize, z: isize, y: isize, xx: isize| -> f64 {
        if z < 0 || y < 0 || xx < 0 || z >= d as isize || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            x.get(&[b, c, z as usize, y as usize, xx as usize])
        }
    };
    let mut out = Vec::new();
    for b in 0..n {
        for co in 0..cout {
            for i in 0..od {
                for j in 0..oh {
                    for l in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for a in 0..ks {
                                for bb in 0..ks {
                                    for c in 0..ks {
                                        acc += k.get(&[co, ci, a, bb, c])
                                            * at(
                                                b,
                                                ci,
                                                (i + a) as isize - pad as isize,
                                                (j + bb) as isize - pad as isize,
                                                (l + c) as isize - pad as isize,
                                            );
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    out
}

pub fn maxpool_oracle(x: &Tensor, win: usize) -> Vec<f64> {
    let s = x.shape();
    let mut out = Vec::new();
    for b in 0..s[0] {
        for c in 0..s[1] {
            for i in 0..s[2] / win {
                for j in 0..s[3] / win {
                    for l in 0..s[4] / win {
                        let mut m = f64::NEG_INFINITY;
                        for a in 0..win {
                            for bb in 0..win {
                                for cc in 0..win {
                                    m = m.max(x.get(&[
                                        b,
                                        c,
                                        i * win + a,
                                        j * win + bb,
                                        l * win + cc,
                                    ]));
                                }
                            }
                        }
                        out.push(m);
                    }
                }
            }
        }
    }
    out
}

/// Scalar-loop image-node update for one subgraph.
pub fn aggregate_oracle(model: &BgnnModel, sg: &BipartiteSubgraph) -> Vec<f64> {
    let cfg = &model.config;
    let (dh, dimg) = (cfg.d_h, cfg.image_dim);
    let alpha = model.alpha().data();
    let vi = model.image_embedding_map();
    let mut pre = vec![0.0; dh];
    if cfg.include_self {
        for r in 0..dh {
            for c in 0..dimg {
                pre[r] += vi.get(&[r, c]) * sg.image[c];
            }
        }
    }
    for &g in &cfg.genes {
        let x = sg.gene_features(g).unwrap();
        let dg = g.dim();
        let e = match cfg.mode {
            WeightMode::Unit => 1.0,
            WeightMode::Learned => {
                let phi = model.phi(g).unwrap();
                let mut s = 0.0;
                for p in 0..dg {
                    for q in 0..dimg {
                        let mut z = 0.0;
                        for a in 0..cfg.a_dim {
                            z += phi.get(&[p * dimg + q, a]) * alpha[a];
                        }
                        s += x[p] * z * sg.image[q];
                    }
                }
                s.max(0.0)
            }
        };
        let v = model.embedding_map(g).unwrap();
        for r in 0..dh {
            let mut hg = 0.0;
            for c in 0..dg {
                hg += v.get(&[r, c]) * x[c];
            }
            pre[r] += e * hg;
        }
    }
    pre.iter().map(|v| v.max(0.0)).collect()
}

/// Per-definition metrics straight from label lists:
/// `(accuracy, precision, recall, f1, macro, weighted)` with per-class vectors.
#[allow(clippy::type_complexity)]
pub fn metrics_oracle(
    t: &[usize],
    p: &[usize],
    k: usize,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64) {
    let n = t.len() as f64;
    let acc = t.iter().zip(p).filter(|(a, b)| a == b).count() as f64 / n;
    let (mut prec, mut rec, mut f1) = (vec![], vec![], vec![]);
    let mut weighted = 0.0;
    for c in 0..k {
        let tp = t.iter().zip(p).filter(|&(&a, &b)| a == c && b == c).count() as f64;
        let pp = p.iter().filter(|&&b| b == c).count() as f64;
        let ap = t.iter().filter(|&&a| a == c).count() as f64;
        let pr = if pp > 0.0 { tp / pp } else { 0.0 };
        let re = if ap > 0.0 { tp / ap } else { 0.0 };
        let f = if pr + re > 0.0 {
            2.0 * pr * re / (pr + re)
        } else {
            0.0
        };
        prec.push(pr);
        rec.push(re);
        f1.push(f);
        weighted += f * ap / n;
    }
    let macro_f1 = f1.iter().sum::<f64>() / k as f64;
    (acc, prec, rec, f1, macro_f1, weighted)
}

/// Worst deviation over `trials` random instances, per kernel.
pub fn run_oracles(trials: usize) -> Vec<(&'static str, Result<f64, String>)> {
    let mut out = Vec::new();
    let r = &mut rng(99);

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (m, k, n) = (
            r.random_range(1..7),
            r.random_range(1..7),
            r.random_range(1..7),
        );
        let a = uniform(r, &[m, k], -2.0, 2.0);
        let b = uniform(r, &[k, n], -2.0, 2.0);
        worst = worst.max(max_diff(
            ops::matmul(&a, &b).unwrap().data(),
            &matmul_oracle(&a, &b),
        ));
    }
    out.push(("matmul", check(worst)));

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let ks = [1, 3][r.random_range(0..2)];
        let pad = r.random_range(0..=ks / 2);
        let dims: Vec<usize> = (0..3).map(|_| r.random_range(ks.max(2)..6)).collect();
        let (n, cin, cout) = (
            r.random_range(1..3),
            r.random_range(1..3),
            r.random_range(1..3),
        );
        let x = uniform(r, &[n, cin, dims[0], dims[1], dims[2]], -1.0, 1.0);
        let kk = uniform(r, &[cout, cin, ks, ks, ks], -1.0, 1.0);
        let got = ops::conv3d(&x, &kk, pad).unwrap();
        worst = worst.max(max_diff(got.data(), &conv3d_oracle(&x, &kk, pad)));
    }
    out.push(("conv3d", check(worst)));

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let win = r.random_range(1..4);
        let dims: Vec<usize> = (0..3).map(|_| r.random_range(win..win * 3 + 1)).collect();
        let (n, c) = (r.random_range(1..3), r.random_range(1..3));
        let x = uniform(r, &[n, c, dims[0], dims[1], dims[2]], -1.0, 1.0);
        let (got, _) = ops::maxpool3d(&x, win).unwrap();
        worst = worst.max(max_diff(got.data(), &maxpool_oracle(&x, win)));
    }
    out.push(("maxpool3d", check(worst)));

    let mut worst = 0.0f64;
    let gene_sets: [&[Gene]; 3] = [
        &[Gene::APOE, Gene::PSEN1],
        &[Gene::PSEN1, Gene::PSEN2],
        &Gene::ALL,
    ];
    for t in 0..trials {
        let genes = gene_sets[t % 3];
        let mode = if t % 2 == 0 {
            WeightMode::Learned
        } else {
            WeightMode::Unit
        };
        let cfg = BgnnConfig {
            d_h: 3,
            a_dim: 4,
            mode,
            include_self: t % 5 != 0,
            ..BgnnConfig::new(genes, 5, 2)
        };
        let model = BgnnModel::init(cfg, t as u64).unwrap();
        for sg in micro_graphs(t as u64 + 500, genes, 5, 2) {
            let got = model.aggregate(&sg).unwrap();
            let want = aggregate_oracle(&model, &sg);
            worst = worst.max(max_diff(&got, &want));
        }
    }
    out.push(("aggregation", check(worst)));

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let k = r.random_range(2..4);
        let n = r.random_range(1..200);
        let t: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let p: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let cm = confusion(&t, &p, k).unwrap();
        for a in 0..k {
            for b in 0..k {
                let count = t
                    .iter()
                    .zip(&p)
                    .filter(|&(&x, &y)| x == a && y == b)
                    .count() as u64;
                if cm.counts[a][b] != count {
                    out.push((
                        "confusion/metrics",
                        Err(format!("count[{a}][{b}] mismatch")),
                    ));
                    return out;
                }
            }
        }
        let m = metrics(&cm, (k == 2).then_some(1)).unwrap();
        let (acc, pr, re, f1, mac, wei) = metrics_oracle(&t, &p, k);
        let mut d = (m.accuracy - acc)
            .abs()
            .max((m.macro_f1 - mac).abs())
            .max((m.weighted_f1 - wei).abs());
        for c in 0..k {
            let pc = &m.per_class[c];
            d = d
                .max((pc.precision.value - pr[c]).abs())
                .max((pc.recall.value - re[c]).abs())
                .max((pc.f1.value - f1[c]).abs());
        }
        if let Some(pos) = &m.positive {
            d = d.max((pos.f1.value - f1[1]).abs());
        }
        worst = worst.max(d);
    }
    out.push(("confusion/metrics", check(worst)));
    out
}

fn check(worst: f64) -> Result<f64, String> {
    if worst <= ORACLE_TOL {
        Ok(worst)
    } else {
        Err(format!("max deviation {worst:e} > {ORACLE_TOL:e}"))
    }
}
