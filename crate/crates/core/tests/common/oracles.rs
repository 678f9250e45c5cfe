use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakfish_core::imaging::Plane;
use weakfish_core::model::{BackboneSpec, HeadKind, Model, build_model};

/// Worst relative error between analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
    pub tensors: usize,
}

fn batch_loss(model: &Model<f64>, batch: &[(Plane<f64>, f64)], dropout_seed: u64) -> f64 {
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let scale = 1.0 / batch.len() as f64;
    batch
        .iter()
        .map(|(x, y)| m.train_example(x, *y, scale, &mut rng).unwrap().loss * scale)
        .sum()
}

pub fn random_batch(n: usize, size: usize, seed: u64) -> Vec<(Plane<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| (Plane::from_fn(size, size, |_, _| rng.random()), (i % 2) as f64))
        .collect()
}

/// Central differences on `per_tensor` sampled coordinates of every parameter
/// tensor of a tiny model.
pub fn gradient_check(head: HeadKind, size: usize, per_tensor: usize, seed: u64) -> GradCheck {
    let mut model = build_model::<f64>(&BackboneSpec::tiny(), head, (size, size), seed).unwrap();
    let batch = random_batch(4, size, seed + 1);
    let dropout_seed = seed + 2;

    model.zero_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let scale = 1.0 / batch.len() as f64;
    for (x, y) in &batch {
        model.train_example(x, *y, scale, &mut rng).unwrap();
    }
    let analytic: Vec<f64> = model.params().iter().flat_map(|p| p.grad.iter().copied()).collect();
    let lens: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let weights = model.export_weights();

    let eps = 1e-6;
    let mut pick = ChaCha8Rng::seed_from_u64(seed + 3);
    let mut out = GradCheck {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
        tensors: lens.len(),
    };
    let mut offset = 0;
    for (t, &len) in lens.iter().enumerate() {
        let mut coords: Vec<usize> = (0..per_tensor.min(len)).map(|_| pick.random_range(0..len)).collect();
        coords.sort_unstable();
        coords.dedup();
        for i in coords {
            let k = offset + i;
            let mut w = weights.clone();
            w[k] += eps;
            model.import_weights(&w).unwrap();
            let plus = batch_loss(&model, &batch, dropout_seed);
            w[k] -= 2.0 * eps;
            model.import_weights(&w).unwrap();
            let minus = batch_loss(&model, &batch, dropout_seed);
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k];
            let denom = a.abs().max(numeric.abs());
            let rel = if denom < 1e-9 { 0.0 } else { (a - numeric).abs() / denom };
            out.checked += 1;
            if rel > out.worst {
                out.worst = rel;
                out.worst_at = format!("tensor {t} index {i}: analytic {a:e}, numeric {numeric:e}");
            }
        }
        offset += len;
    }
    model.import_weights(&weights).unwrap();
    out
}

/// Pairwise Mann–Whitney AUC: wins plus half the ties over all
/// positive/negative pairs.
pub fn brute_force_auc(scores: &[(f64, u8)]) -> f64 {
    let pos: Vec<f64> = scores.iter().filter(|s| s.1 == 1).map(|s| s.0).collect();
    let neg: Vec<f64> = scores.iter().filter(|s| s.1 == 0).map(|s| s.0).collect();
    let mut twice_wins: u64 = 0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                twice_wins += 2;
            } else if p == n {
                twice_wins += 1;
            }
        }
    }
    twice_wins as f64 / (2.0 * pos.len() as f64 * neg.len() as f64)
}

/// Macro-averaged precision and recall over `(tp, fp, fn)` triples; classes
/// with an empty denominator add 0.
pub fn macro_precision_recall(classes: &[(u64, u64, u64)]) -> (f64, f64) {
    let c = classes.len() as f64;
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for &(tp, fp, fn_) in classes {
        if tp + fp > 0 {
            p_sum += tp as f64 / (tp + fp) as f64;
        }
        if tp + fn_ > 0 {
            r_sum += tp as f64 / (tp + fn_) as f64;
        }
    }
    (p_sum / c, r_sum / c)
}

/// Plain (unclipped) tile histogram equalization with tent-weighted blending
/// between tile centres. Tile `t` along an axis has its centre at
/// `(t + 0.5) * tile` in pixel-index coordinates; positions beyond the first
/// or last centre take that edge tile alone. Requires the image size to be a
/// multiple of the grid.
pub fn tile_equalize(img: &[u8], h: usize, w: usize, rows: usize, cols: usize) -> Vec<u8> {
    assert!(h % rows == 0 && w % cols == 0);
    let (th, tw) = (h / rows, w / cols);
    let n = (th * tw) as f64;
    let mut maps = vec![[0.0f64; 256]; rows * cols];
    for ty in 0..rows {
        for tx in 0..cols {
            let mut count = [0usize; 256];
            for y in ty * th..(ty + 1) * th {
                for x in tx * tw..(tx + 1) * tw {
                    count[img[y * w + x] as usize] += 1;
                }
            }
            let mut below_or_equal = 0usize;
            for v in 0..256 {
                below_or_equal += count[v];
                maps[ty * cols + tx][v] = (255.0 * below_or_equal as f64 / n).round();
            }
        }
    }
    let weights = |pos: usize, tile: usize, tiles: usize| -> Vec<f64> {
        let p = pos as f64;
        let first = 0.5 * tile as f64;
        let last = (tiles as f64 - 0.5) * tile as f64;
        (0..tiles)
            .map(|t| {
                let c = (t as f64 + 0.5) * tile as f64;
                if (p <= first && t == 0) || (p >= last && t == tiles - 1) {
                    1.0
                } else {
                    (1.0 - (p - c).abs() / tile as f64).max(0.0)
                }
            })
            .collect()
    };
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        let wy = weights(y, th, rows);
        for x in 0..w {
            let wx = weights(x, tw, cols);
            let v = img[y * w + x] as usize;
            let mut acc = 0.0;
            for ty in 0..rows {
                for tx in 0..cols {
                    let k = wy[ty] * wx[tx];
                    if k > 0.0 {
                        acc += k * maps[ty * cols + tx][v];
                    }
                }
            }
            out[y * w + x] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}
