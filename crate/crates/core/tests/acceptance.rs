use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stgt_core::augment::{balance_to_ratio, AugRow, AugmentConfig, Partition, Provenance};
use stgt_core::autodiff::{Matrix, Tape};
use stgt_core::features::{static_pool, F_X, STATIC_NAMES};
use stgt_core::graph::{topo_features, Adjacency};
use stgt_core::ingest::synth_generate;
use stgt_core::pipeline::*;
use stgt_core::stgt::{focal_loss, spatial_attention, Batch, Checkpoint, DayGroup, LossConfig, MaskMode, ModelConfig, StgtModel};
use stgt_core::train::{
    check_forward_chaining, check_partition_order, cv_folds, evaluate, predict_dataset, train_stgt, Bundle, EvalConfig, Fold,
    SeqDataset, TrainConfig, TrainError,
};
use stgt_core::trees::{fit_gbt, predict_gbt, GbtConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

// 1 -------------------------------------------------------------------------

fn loss_only(model: &StgtModel, batch: &Batch, statics: &Matrix, labels: &[bool], lc: &LossConfig) -> f64 {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, batch, statics, false).unwrap();
    let l = focal_loss(&mut tape, fwd.probs, labels, lc).unwrap();
    tape.value(l).data()[0]
}

/// Central difference of `loss` along `dir` with step `h`, plus whether
/// the one-sided slopes disagree, i.e. a ReLU kink lies within `h`.
fn directional(model: &mut StgtModel, ti: usize, dir: &[(usize, f64)], h: f64, f0: f64, loss: &dyn Fn(&StgtModel) -> f64) -> (f64, bool) {
    let orig: Vec<f64> = dir.iter().map(|&(e, _)| model.params.tensor(ti).data()[e]).collect();
    let shift = |model: &mut StgtModel, step: f64| {
        for (&(e, r), &o) in dir.iter().zip(&orig) {
            model.params.tensor_mut(ti).data_mut()[e] = o + step * r;
        }
    };
    shift(model, h);
    let up = loss(model);
    shift(model, -h);
    let down = loss(model);
    shift(model, 0.0);
    let (fwd, bwd) = ((up - f0) / h, (f0 - down) / h);
    let kink = (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-5);
    ((up - down) / (2.0 * h), kink)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let cfg = ModelConfig { n_nodes: 2, f_z: STATIC_NAMES.len(), ..ModelConfig::default() };
    let mut model = ok(StgtModel::new(cfg.clone(), 21))?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    // zero-initialized tensors must take part too
    for t in model.params.tensors_mut() {
        for x in t.data_mut() {
            *x += rng.gen_range(-0.05..0.05);
        }
    }
    let statics = random_matrix(&mut rng, 2, cfg.f_z, 1.0);
    let batch = Batch {
        windows: random_matrix(&mut rng, 2 * cfg.lookback, F_X, 1.0),
        nodes: vec![0, 1],
        groups: vec![DayGroup { members: vec![0, 1], mask: vec![1.0; 4], targets: vec![0, 1] }],
    };
    let labels = [true, false];
    let lc = ok(LossConfig::new(0.3, 2.0, 0.2))?;
    let (f0, grads) = ok(model.loss_and_grads(&batch, &statics, &labels, &lc))?;
    let loss = |m: &StgtModel| loss_only(m, &batch, &statics, &labels, &lc);
    ensure((loss(&model) - f0).abs() < 1e-14, || "forward passes disagree".into())?;

    let h = 1e-5;
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let (mut worst, mut worst_at, mut entries, mut kinks) = (0.0f64, String::new(), 0usize, 0usize);
    let record = |rel: f64, at: String, worst: &mut f64, worst_at: &mut String| {
        if rel > *worst {
            *worst = rel;
            *worst_at = at;
        }
    };
    for (ti, grad) in grads.iter().enumerate() {
        let g = grad.data();
        // every entry of small tensors, a fixed random subset of large ones
        let idx: Vec<usize> = if g.len() <= 512 {
            (0..g.len()).collect()
        } else {
            rand::seq::index::sample(&mut rng, g.len(), 512).into_vec()
        };
        for e in idx {
            let (mut numeric, kink) = directional(&mut model, ti, &[(e, 1.0)], h, f0, &loss);
            if kink && rel_err(g[e], numeric) >= 1e-4 {
                kinks += 1;
                numeric = directional(&mut model, ti, &[(e, 1.0)], h / 100.0, f0, &loss).0;
            }
            record(rel_err(g[e], numeric), format!("{}[{e}] analytic {:e} numeric {numeric:e}", names[ti], g[e]), &mut worst, &mut worst_at);
            entries += 1;
        }
        // all entries at once along a random unit direction
        let dir: Vec<(usize, f64)> = (0..g.len()).map(|e| (e, rng.sample::<f64, _>(StandardNormal))).collect();
        let norm = dir.iter().map(|(_, r)| r * r).sum::<f64>().sqrt();
        let dir: Vec<(usize, f64)> = dir.into_iter().map(|(e, r)| (e, r / norm)).collect();
        let analytic: f64 = dir.iter().map(|&(e, r)| g[e] * r).sum();
        let (mut numeric, kink) = directional(&mut model, ti, &dir, h, f0, &loss);
        if kink && rel_err(analytic, numeric) >= 1e-4 {
            kinks += 1;
            numeric = directional(&mut model, ti, &dir, h / 100.0, f0, &loss).0;
        }
        record(rel_err(analytic, numeric), format!("{} along a random direction", names[ti]), &mut worst, &mut worst_at);
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{} tensors ({} scalars): {entries} entries plus one random direction each, {kinks} rechecked at h/100 across a kink, worst rel err {worst:.2e} ({worst_at}), {secs:.1}s",
        grads.len(),
        model.params.scalar_count()
    );
    ensure(worst < 1e-4, || detail.clone())?;
    ensure(secs < 60.0, || detail.clone())?;
    Ok(detail)
}

// 2 -------------------------------------------------------------------------

fn random_graph(rng: &mut ChaCha8Rng) -> (usize, Vec<Vec<bool>>) {
    let n = rng.gen_range(1..=7);
    let p = rng.gen_range(0.1..0.9);
    let mut a = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                a[i][j] = true;
                a[j][i] = true;
            }
        }
    }
    (n, a)
}

/// Every simple path from `s` to `t`.
fn simple_paths(a: &[Vec<bool>], s: usize, t: usize) -> Vec<Vec<usize>> {
    fn walk(a: &[Vec<bool>], path: &mut Vec<usize>, t: usize, out: &mut Vec<Vec<usize>>) {
        let u = *path.last().unwrap();
        if u == t {
            out.push(path.clone());
            return;
        }
        for w in 0..a.len() {
            if a[u][w] && !path.contains(&w) {
                path.push(w);
                walk(a, path, t, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(a, &mut vec![s], t, &mut out);
    out
}

/// Dense Gaussian elimination with partial pivoting.
fn solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    x
}

fn oracle_features(n: usize, a: &[Vec<bool>]) -> [Vec<f64>; 5] {
    let deg: Vec<f64> = (0..n).map(|i| a[i].iter().filter(|&&x| x).count() as f64).collect();

    let mut betw = vec![0.0; n];
    for s in 0..n {
        for t in s + 1..n {
            let paths = simple_paths(a, s, t);
            let Some(min) = paths.iter().map(Vec::len).min() else { continue };
            let shortest: Vec<&Vec<usize>> = paths.iter().filter(|p| p.len() == min).collect();
            for (v, b) in betw.iter_mut().enumerate() {
                if v != s && v != t {
                    *b += shortest.iter().filter(|p| p.contains(&v)).count() as f64 / shortest.len() as f64;
                }
            }
        }
    }

    let inf = usize::MAX / 4;
    let mut dist = vec![vec![inf; n]; n];
    for i in 0..n {
        dist[i][i] = 0;
        for j in 0..n {
            if a[i][j] {
                dist[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                dist[i][j] = dist[i][j].min(dist[i][k] + dist[k][j]);
            }
        }
    }
    let close: Vec<f64> = (0..n)
        .map(|i| {
            let total: usize = dist[i].iter().filter(|&&d| d < inf).sum();
            if total == 0 { 0.0 } else { 1.0 / total as f64 }
        })
        .collect();

    let clust: Vec<f64> = (0..n)
        .map(|i| {
            let k = deg[i] as usize;
            if k < 2 {
                return 0.0;
            }
            let mut tri = 0;
            for j in 0..n {
                for l in j + 1..n {
                    if a[i][j] && a[i][l] && a[j][l] {
                        tri += 1;
                    }
                }
            }
            2.0 * tri as f64 / (k * (k - 1)) as f64
        })
        .collect();

    // PR = (1-α)/N + α Σ_{j~s} PR_j/deg_j + α/N Σ_{deg_j=0} PR_j
    let alpha = 0.85;
    let nf = n as f64;
    let mut m = vec![vec![0.0; n]; n];
    for s in 0..n {
        m[s][s] = 1.0;
        for j in 0..n {
            if a[s][j] {
                m[s][j] -= alpha / deg[j];
            }
            if deg[j] == 0.0 {
                m[s][j] -= alpha / nf;
            }
        }
    }
    let pr = solve(m, vec![(1.0 - alpha) / nf; n]);
    [deg, betw, close, pr, clust]
}

fn centrality_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let names = ["degree", "betweenness", "closeness", "pagerank", "clustering"];
    let mut worst = [0.0f64; 5];
    for g in 0..100 {
        let (n, a) = random_graph(&mut rng);
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| a[i][j]).collect();
        let adj = ok(Adjacency::from_edges(n, &edges))?;
        let f = ok(topo_features(&adj))?;
        let got = [f.degree, f.betweenness, f.closeness, f.pagerank, f.clustering];
        let want = oracle_features(n, &a);
        for k in 0..5 {
            for i in 0..n {
                let err = (got[k][i] - want[k][i]).abs();
                worst[k] = worst[k].max(err);
                ensure(err <= 1e-8, || format!("graph {g} (n={n}) {} of node {i}: {} vs oracle {}", names[k], got[k][i], want[k][i]))?;
            }
        }
    }
    Ok(format!("100 graphs, n <= 7; max abs errors {}", names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ")))
}

// 3 -------------------------------------------------------------------------

fn masking() -> Check {
    let b = 6;
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mask = vec![0.0; b * b];
    for i in 0..b {
        mask[i * b + i] = 1.0;
        for j in i + 1..b {
            if rng.gen_bool(0.4) {
                mask[i * b + j] = 1.0;
                mask[j * b + i] = 1.0;
            }
        }
    }
    let u0 = random_matrix(&mut rng, b, d, 1.0);
    let v0 = random_matrix(&mut rng, b, d, 1.0);
    let blocked = mask.iter().filter(|&&m| m == 0.0).count();
    ensure(blocked > 0, || "mask has no blocked pair".into())?;

    let mut checked_grads = 0;
    for mode in [MaskMode::PostSoftmax, MaskMode::PreSoftmax] {
        let mut tape = Tape::new();
        let u = tape.param(u0.clone());
        let v = tape.param(v0.clone());
        let (_, w) = ok(spatial_attention(&mut tape, u, u, v, &mask, mode))?;
        let wv = tape.value(w).clone();
        for i in 0..b {
            for j in 0..b {
                if mask[i * b + j] == 0.0 {
                    ensure(wv.get(i, j) == 0.0, || format!("{mode:?}: weight ({i},{j}) = {}", wv.get(i, j)))?;
                }
            }
            if mode == MaskMode::PreSoftmax {
                let s: f64 = wv.row(i).iter().sum();
                ensure((s - 1.0).abs() <= 1e-12, || format!("pre-softmax row {i} sums to {s}"))?;
            }
        }
        // ∂g_i/∂v_j for every output coordinate, one backward pass each
        for i in 0..b {
            for c in 0..d {
                let mut tape = Tape::new();
                let u = tape.param(u0.clone());
                let v = tape.param(v0.clone());
                let (g, _) = ok(spatial_attention(&mut tape, u, u, v, &mask, mode))?;
                let row = ok(tape.gather_rows(g, &[i]))?;
                let mut onehot = Matrix::zeros(1, d);
                onehot.set(0, c, 1.0);
                let sel = tape.constant(onehot);
                let picked = ok(tape.hadamard(row, sel))?;
                let s = ok(tape.sum(picked))?;
                ok(tape.backward(s))?;
                let gv = tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(b, d));
                let gu = tape.grad(u).cloned().unwrap_or_else(|| Matrix::zeros(b, d));
                for j in 0..b {
                    if mask[i * b + j] == 0.0 {
                        ensure(gv.row(j).iter().all(|&x| x == 0.0), || format!("{mode:?}: value gradient g{i} <- v{j}"))?;
                        if mode == MaskMode::PreSoftmax {
                            ensure(gu.row(j).iter().all(|&x| x == 0.0), || format!("pre-softmax gradient g{i} <- u{j}"))?;
                        }
                        checked_grads += 1;
                    }
                }
            }
        }
    }

    // the full model: a node with no neighbour in its group gets the same
    // probability whatever its group mates look like
    let cfg = ModelConfig { n_nodes: 3, f_z: 2, mask_mode: MaskMode::PreSoftmax, ..ModelConfig::default() };
    let model = ok(StgtModel::new(cfg.clone(), 5))?;
    let statics = random_matrix(&mut rng, 3, 2, 1.0);
    let mut windows = random_matrix(&mut rng, 3 * cfg.lookback, F_X, 1.0);
    let group = DayGroup { members: vec![0, 1, 2], mask: vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0], targets: vec![2] };
    let before = ok(model.predict(&Batch { windows: windows.clone(), nodes: vec![0, 1, 2], groups: vec![group.clone()] }, &statics))?;
    for r in 0..2 * cfg.lookback {
        windows.row_mut(r).iter_mut().for_each(|x| *x += 1.0);
    }
    let after = ok(model.predict(&Batch { windows, nodes: vec![0, 1, 2], groups: vec![group] }, &statics))?;
    ensure(before[0].to_bits() == after[0].to_bits(), || "isolated node depends on its group".into())?;
    Ok(format!("{blocked} blocked pairs, zero weights in both modes, {checked_grads} zero gradient rows, pre-softmax rows sum to 1"))
}

// 4 -------------------------------------------------------------------------

fn loss_value(p: &[f64], y: &[bool], lc: &LossConfig) -> f64 {
    let mut tape = Tape::new();
    let pv = tape.constant(Matrix::column_vector(p.to_vec()));
    let l = focal_loss(&mut tape, pv, y, lc).unwrap();
    tape.value(l).data()[0]
}

fn loss_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..50);
        let alpha = rng.gen_range(0.05..0.95);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.001..0.999)).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let lc = LossConfig { alpha, gamma: 0.0, beta: 1.0, eps: 1e-7 };
        let ce: f64 = p.iter().zip(&y).map(|(&p, &y)| -alpha * if y { p.ln() } else { (1.0 - p).ln() }).sum::<f64>() / n as f64;
        let err = (loss_value(&p, &y, &lc) - ce).abs();
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("gamma 0 differs from weighted cross-entropy by {err:e}"))?;
    }
    let lc = LossConfig { alpha: 0.3, gamma: 2.0, beta: 1.0, eps: 1e-7 };
    let v = loss_value(&[0.9], &[true], &lc);
    let hand = 0.3 * (1.0f64 - 0.9).powi(2) * -(0.9f64.ln());
    ensure((v - 3.161e-4).abs() <= 1e-7, || format!("y=1, p=0.9 gives {v:e}"))?;
    ensure((v - hand).abs() <= 1e-12, || format!("y=1, p=0.9 gives {v:e}, hand value {hand:e}"))?;
    Ok(format!("gamma=0 max deviation {worst:.1e} over 200 batches; y=1 p=0.9 -> {v:.6e}"))
}

// 5 -------------------------------------------------------------------------

fn augmentation_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<AugRow> = (0..1000)
        .map(|i| AugRow::original((0..10).map(|_| rng.gen_range(-1.0..1.0)).collect(), i % 20 == 0, Partition::Train))
        .collect();
    let share = rows.iter().filter(|r| r.label).count() as f64 / rows.len() as f64;
    ensure((share - 0.05).abs() < 1e-12, || format!("fold has {share} positives"))?;
    let discrete = vec![false; 10];
    let cfg = AugmentConfig { seed: 55, ..AugmentConfig::default() };
    let (out, summary) = ok(balance_to_ratio(&rows, &discrete, &cfg))?;
    let frac = out.iter().filter(|r| r.label).count() as f64 / out.len() as f64;
    ensure((0.300..=0.310).contains(&frac), || format!("positive fraction {frac}"))?;
    ensure(out[..1000] == rows[..], || "input rows changed".into())?;
    for (i, r) in out.iter().enumerate().skip(1000) {
        ensure(r.provenance.is_synthetic() && r.parent.is_some() && r.label, || format!("row {i} is not flagged"))?;
    }

    let probs: Vec<f64> = out.iter().map(|_| rng.gen()).collect();
    let labels: Vec<bool> = out.iter().map(|r| r.label).collect();
    let prov: Vec<Provenance> = out.iter().map(|r| r.provenance).collect();
    let refused = matches!(evaluate(&probs, &labels, &prov, 0.5, &EvalConfig::default()), Err(TrainError::SyntheticRows(n)) if n == out.len() - 1000);
    ensure(refused, || "evaluation accepted synthetic rows".into())?;
    let ok_original = evaluate(&probs[..1000], &labels[..1000], &prov[..1000], 0.5, &EvalConfig { boot_iters: 10, ..EvalConfig::default() });
    ensure(ok_original.is_ok(), || "evaluation refused original rows".into())?;
    Ok(format!(
        "{} replicated + {} SMOTE rows, positive fraction {frac:.4}, all flagged, evaluation refuses them",
        summary.replicated, summary.smote
    ))
}

// 6 -------------------------------------------------------------------------

fn anti_leakage() -> Check {
    let cfg = PipelineConfig::default().with_seed(6);
    let data = ok(synth_generate(&cfg.synth))?;
    let series = ok(ingest_events(&data.events, &cfg))?;
    let prep = ok(prepare(&data.sites, &series, &cfg))?;
    let p = &prep.partitions;
    let dates = &prep.label_dates;
    let max = |ids: &[usize]| ids.iter().map(|&i| dates[i]).max().unwrap();
    let min = |ids: &[usize]| ids.iter().map(|&i| dates[i]).min().unwrap();
    ensure(max(&p.train) < min(&p.val), || format!("train ends {} after val starts {}", max(&p.train), min(&p.val)))?;
    ensure(min(&p.val) < min(&p.test) && max(&p.val) < min(&p.test), || "validation overlaps test".into())?;
    ok(check_partition_order(dates, p))?;
    for &i in &p.train {
        let s = &prep.samples[i];
        ensure(s.day < dates[i] && dates[i] <= cfg.split.train_end(), || format!("training sample {i} reaches past the split"))?;
    }

    let folds = ok(cv_folds(dates, &p.train, 5))?;
    let mut seen = std::collections::BTreeSet::new();
    for (k, f) in folds.iter().enumerate() {
        ensure(max(&f.fit) < min(&f.holdout), || format!("fold {k} fits on days after its holdout"))?;
        for &i in &f.holdout {
            ensure(seen.insert(i), || format!("sample {i} is held out twice"))?;
        }
    }
    ok(check_forward_chaining(dates, &folds))?;

    // the scan must reject a single misplaced sample
    let mut bad = p.clone();
    bad.train.push(p.val[0]);
    ensure(check_partition_order(dates, &bad).is_err(), || "leaked validation sample went unnoticed".into())?;
    let mut bad = p.clone();
    bad.val.push(p.test[p.test.len() - 1]);
    ensure(check_partition_order(dates, &bad).is_err(), || "leaked test sample went unnoticed".into())?;
    let mut bad_folds: Vec<Fold> = folds.clone();
    bad_folds[0].fit.push(folds[1].holdout[0]);
    ensure(check_forward_chaining(dates, &bad_folds).is_err(), || "fold leak went unnoticed".into())?;

    // historical static features ignore every day after the training years
    let mut altered = prep.series.clone();
    for s in &mut altered {
        for (i, c) in s.counts.iter_mut().enumerate() {
            if s.start + Days::new(i as u64) > cfg.split.train_end() {
                *c += 7;
            }
        }
    }
    let pool = ok(static_pool(&prep.sites, &prep.topo, &altered, cfg.split.train_end()))?;
    ensure(pool == prep.pool, || "static pool reads post-training days".into())?;
    Ok(format!(
        "train <= {}, val {}..{}, test from {}; 5 forward-chaining folds; injected leaks detected",
        max(&p.train),
        min(&p.val),
        max(&p.val),
        min(&p.test)
    ))
}

// 7 -------------------------------------------------------------------------

fn capacity() -> Check {
    let start = Instant::now();
    let lookback = 14;
    let cfg = ModelConfig { n_nodes: 2, f_z: 3, lookback, ..ModelConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ds = SeqDataset::new(lookback, F_X);
    let day0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    for d in 0..100 {
        let mut real = Vec::new();
        let mut labels = Vec::new();
        for node in 0..2 {
            let w: Vec<f64> = (0..lookback * F_X).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            // planted: the last day's count column decides the label
            labels.push(w[(lookback - 1) * F_X] > 0.8);
            real.push(ok(ds.push_sequence(&w, node))?);
        }
        ds.bundles.push(Bundle { day: day0 + Days::new(d), real, labels, mask: vec![1.0, 0.0, 0.0, 1.0], synthetic: vec![] });
    }
    let labels = ds.real_labels();
    let positives = labels.iter().filter(|&&l| l).count();
    let statics = random_matrix(&mut rng, 2, 3, 1.0);
    let mut model = ok(StgtModel::new(cfg, 70))?;
    let loss = ok(LossConfig::new(0.3, 2.0, positives as f64 / labels.len() as f64))?;
    let train = TrainConfig {
        batch_size: 64,
        max_epochs: 500,
        patience: 500,
        learning_rate: 1e-3,
        weighted_sampling: false,
        target_train_f1: Some(0.99),
        seed: 71,
        ..TrainConfig::default()
    };
    let history = ok(train_stgt(&mut model, &statics, &ds, None, &loss, &train))?;
    let probs = ok(predict_dataset(&model, &statics, &ds, 64))?;
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &y) in probs.iter().zip(&labels) {
        match (p >= 0.5, y) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    let f1 = 2.0 * tp / (2.0 * tp + fp + fn_);
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{} samples ({positives} positive): train F1 {f1:.4} after {} epochs, {secs:.1}s", labels.len(), history.epochs.len());
    ensure(labels.len() == 200, || detail.clone())?;
    ensure(f1 >= 0.99 && history.epochs.len() <= 500 && secs < 300.0, || detail.clone())?;
    Ok(detail)
}

// 8 -------------------------------------------------------------------------

/// Settings for the behavioural comparison. One training year cannot teach
/// seasonality, so the calendar columns and the day counter are left out;
/// the small learning rate and batch keep the transformer from memorizing
/// the noisy labels within the short budget.
fn behaviour_config(strength: f64, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.synth.propagation_strength = strength;
    cfg.features.calendar = false;
    cfg.features.time_counter = false;
    cfg.train.learning_rate = 1e-4;
    cfg.train.batch_size = 64;
    cfg.train.max_epochs = 8;
    cfg.train.patience = 8;
    cfg.train.epoch_samples = Some(4000);
    cfg.with_seed(seed)
}

struct Pair {
    stgt_f1: f64,
    stgt_recall: f64,
    gbt_f1: f64,
    gbt_recall: f64,
}

fn compare(strength: f64, seed: u64) -> Result<Pair, String> {
    let cfg = behaviour_config(strength, seed);
    let data = ok(synth_generate(&cfg.synth))?;
    let series = ok(ingest_events(&data.events, &cfg))?;
    let prep = ok(prepare(&data.sites, &series, &cfg))?;
    let cols = ok(static_selection(&prep, &cfg))?;
    let gbt = ok(run_gbt(&prep, &cfg, &cols))?;
    let g = ok(evaluate_predictions(&gbt.predictions, "gbt", "all", &cfg.eval))?;
    let stgt = ok(run_stgt(&prep, &cfg, &cols))?;
    let s = ok(evaluate_predictions(&stgt.predictions, "stgt", "all", &cfg.eval))?;
    Ok(Pair { stgt_f1: s.test.f1.value, stgt_recall: s.test.recall.value, gbt_f1: g.test.f1.value, gbt_recall: g.test.recall.value })
}

fn behaviour() -> Check {
    let seeds = 0..5u64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut lines = Vec::new();

    let start = Instant::now();
    let planted: Vec<Pair> = seeds.clone().map(|s| compare(10.0, s)).collect::<Result<_, _>>()?;
    let secs = start.elapsed().as_secs_f64();
    let (sf1, gf1) = (mean(&planted.iter().map(|p| p.stgt_f1).collect::<Vec<_>>()), mean(&planted.iter().map(|p| p.gbt_f1).collect::<Vec<_>>()));
    let (srec, grec) =
        (mean(&planted.iter().map(|p| p.stgt_recall).collect::<Vec<_>>()), mean(&planted.iter().map(|p| p.gbt_recall).collect::<Vec<_>>()));
    for (s, p) in seeds.clone().zip(&planted) {
        println!(
            "    strength 10 seed {s}: stgt f1 {:.3} recall {:.3} | gbt f1 {:.3} recall {:.3}",
            p.stgt_f1, p.stgt_recall, p.gbt_f1, p.gbt_recall
        );
    }
    lines.push(format!("strength 10: F1 {sf1:.3} vs {gbt:.3} (+{:.3}), recall {srec:.3} vs {grec:.3}, {secs:.0}s", sf1 - gf1, gbt = gf1));

    let control: Vec<Pair> = seeds.clone().map(|s| compare(0.0, s)).collect::<Result<_, _>>()?;
    for (s, p) in seeds.zip(&control) {
        println!(
            "    strength 0 seed {s}: stgt f1 {:.3} recall {:.3} | gbt f1 {:.3} recall {:.3}",
            p.stgt_f1, p.stgt_recall, p.gbt_f1, p.gbt_recall
        );
    }
    let (cs, cg) = (mean(&control.iter().map(|p| p.stgt_f1).collect::<Vec<_>>()), mean(&control.iter().map(|p| p.gbt_f1).collect::<Vec<_>>()));
    lines.push(format!("strength 0: F1 {cs:.3} vs {cg:.3} ({:+.3})", cs - cg));
    let detail = lines.join("; ");

    ensure(srec >= grec, || format!("recall below baseline: {detail}"))?;
    ensure(sf1 - gf1 >= 0.03, || format!("F1 advantage too small: {detail}"))?;
    ensure(cs - cg < 0.03, || format!("advantage persists without propagation: {detail}"))?;
    ensure(secs < 600.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

// 9 -------------------------------------------------------------------------

fn gbt_soundness() -> Check {
    // deterministic lattice split by the plane x + 2y - z = 0.3
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..12 {
        for j in 0..12 {
            for k in 0..6 {
                let p = [i as f64 / 11.0 - 0.5, j as f64 / 11.0 - 0.5, k as f64 / 5.0 - 0.5];
                x.push(p.to_vec());
                y.push(p[0] + 2.0 * p[1] - p[2] > 0.3);
            }
        }
    }
    let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, (r, l)) in x.into_iter().zip(y).enumerate() {
        if i % 4 == 0 {
            xte.push(r);
            yte.push(l);
        } else {
            xtr.push(r);
            ytr.push(l);
        }
    }
    let (model, trace) = ok(fit_gbt(&xtr, &ytr, &GbtConfig::default(), 9))?;
    let probs = ok(predict_gbt(&model, &xte))?;
    let acc = probs.iter().zip(&yte).filter(|(&p, &l)| (p >= 0.5) == l).count() as f64 / yte.len() as f64;
    let rises = trace.windows(2).filter(|w| w[1] > w[0]).count();
    let detail = format!("test accuracy {acc:.4} on {} points, loss {:.4} -> {:.4} over {} rounds", yte.len(), trace[0], trace[trace.len() - 1], trace.len() - 1);
    ensure(acc >= 0.95, || detail.clone())?;
    ensure(rises == 0, || format!("{rises} rounds raised the loss; {detail}"))?;
    Ok(detail)
}

// 10 ------------------------------------------------------------------------

fn small_run_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.synth.n_substations = 6;
    cfg.model.d_model = 32;
    cfg.model.heads = 4;
    cfg.train.max_epochs = 2;
    cfg.train.epoch_samples = Some(600);
    cfg.train.batch_size = 64;
    cfg.gbt.n_estimators = 20;
    cfg.with_seed(seed)
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("stgt-acceptance-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn metrics_file(seed: u64, path: &std::path::Path) -> Result<(Prepared, StgtRun, PipelineConfig), String> {
    let cfg = small_run_config(seed);
    let data = ok(synth_generate(&cfg.synth))?;
    let series = ok(ingest_events(&data.events, &cfg))?;
    let prep = ok(prepare(&data.sites, &series, &cfg))?;
    let cols = ok(static_selection(&prep, &cfg))?;
    let run = ok(run_stgt(&prep, &cfg, &cols))?;
    let metrics = ok(evaluate_predictions(&run.predictions, "stgt", &cfg.features.groups.label(), &cfg.eval))?;
    ok(write_json(path, &metrics))?;
    Ok((prep, run, cfg))
}

fn determinism() -> Check {
    let dir = scratch_dir("determinism");
    let (a, b) = (dir.join("a.json"), dir.join("b.json"));
    let (prep, run, cfg) = metrics_file(10, &a)?;
    metrics_file(10, &b)?;
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ensure(ba == bb, || "metrics.json differs between runs".into())?;

    let ck = dir.join("checkpoint.json");
    ok(write_text(&ck, &ok(Checkpoint::new(run.model.config.clone(), run.model.params.clone()).to_json())?))?;
    let back = ok(Checkpoint::from_json(&ok(read_text(&ck))?))?;
    let model = ok(StgtModel::from_parts(back.config, back.params))?;
    let pre_path = dir.join("preprocess.json");
    ok(write_json(&pre_path, &run.preprocess))?;
    let pre: Preprocess = ok(read_json(&pre_path))?;
    let again = ok(score_samples(&prep, &pre, &model, &prep.partitions.test, "test", cfg.train.batch_size))?;
    let before: Vec<&PredictionRow> = run.predictions.iter().filter(|r| r.split == "test").collect();
    ensure(again.len() == before.len(), || "prediction count changed".into())?;
    for (x, y) in again.iter().zip(&before) {
        ensure(x.probability.to_bits() == y.probability.to_bits(), || format!("{} {}: {} vs {}", x.substation_id, x.date, x.probability, y.probability))?;
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(format!("{} identical metrics bytes; {} test predictions bit-identical after checkpoint reload", ba.len(), again.len()))
}

// 11 ------------------------------------------------------------------------

fn scored_sample(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let y = rng.gen_bool(0.3);
            let z: f64 = rng.sample(StandardNormal);
            let p = 1.0 / (1.0 + (-(z + if y { 1.2 } else { -0.6 })).exp());
            (p, y)
        })
        .unzip()
}

fn bootstrap_cis() -> Check {
    let cfg = EvalConfig { boot_iters: 1000, beta: 2.0, seed: 11 };
    let mut widths = Vec::new();
    for n in [100, 10_000] {
        let (p, y) = scored_sample(n, 111);
        let r = ok(evaluate(&p, &y, &vec![Provenance::Original; n], 0.5, &cfg))?;
        let ms = [("accuracy", r.accuracy), ("precision", r.precision), ("recall", r.recall), ("f1", r.f1), ("mae", r.mae)];
        for (name, m) in ms {
            ensure(m.ci_lo <= m.value && m.value <= m.ci_hi, || format!("n={n} {name}: {} outside [{}, {}]", m.value, m.ci_lo, m.ci_hi))?;
        }
        widths.push(ms.map(|(name, m)| (name, m.ci_hi - m.ci_lo)));
    }
    for k in 0..5 {
        let (name, small) = widths[0][k];
        let large = widths[1][k].1;
        ensure(large < small, || format!("{name}: width {large} at n=10000 vs {small} at n=100"))?;
    }
    Ok(widths[0].iter().zip(&widths[1]).map(|((n, a), (_, b))| format!("{n} {a:.3}->{b:.4}")).collect::<Vec<_>>().join(", "))
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Check); 11] = [
        (1, "gradient fidelity", gradient_fidelity),
        (2, "centrality oracle", centrality_oracle),
        (3, "topology masking", masking),
        (4, "loss identities", loss_identities),
        (5, "augmentation contract", augmentation_contract),
        (6, "anti-leakage", anti_leakage),
        (7, "capacity sanity", capacity),
        (8, "spatial propagation advantage", behaviour),
        (9, "gbt soundness", gbt_soundness),
        (10, "determinism and persistence", determinism),
        (11, "bootstrap intervals", bootstrap_cis),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()),
        };
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS {name}: {detail}"),
            Err(detail) => {
                println!("criterion {id:>2} FAIL {name}: {detail}");
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
