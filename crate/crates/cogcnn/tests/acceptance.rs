//! Acceptance suite: one test per acceptance criterion, each runnable
//! standalone (`cargo test --test acceptance <name>`). Independent oracles
//! (brute-force references, hand-derived constants) are implemented inside
//! this file rather than reusing library internals wherever practical.

use ndarray::{Array4, ArrayD};
use rand::Rng;

use cogcnn::autodiff::Tape;
use cogcnn::cue::{generate_synthetic_dataset, LabelMode, SynthConfig};
use cogcnn::image_data::{BinaryMask, GreyImage, RgbImage};
use cogcnn::modality::{
    extract_edges, extract_modalities, extract_silhouette, synthesize_texture, vertical_cut,
    CannyConfig, TextureSynthConfig, DEFAULT_WHITE_THRESH,
};
use cogcnn::model::{
    attend, is_stage2_param, Binding, CognitiveModel, LatentBundle, ModelConfig, ParamStore,
};
use cogcnn::relevance::{bias_gap, even_boundaries, modality_coefficients};
use cogcnn::rng;
use cogcnn::train::stage2_forward;

// ---------------------------------------------------------------------------
// Criterion 1: metric correctness on random inputs.
// RRMC/TRMC sum to 1 +- 1e-6 with entries in (0,1); permutation and
// positive-scaling invariances hold exactly.
// ---------------------------------------------------------------------------

#[test]
fn c1_metric_correctness_on_random_samples() {
    let mut r = rng::stream(101, "acceptance/metric");
    let n_mod = 4;
    let seg = 16;
    let boundaries = even_boundaries(n_mod, seg);
    for _ in 0..1000 {
        let gate: Vec<f64> = (0..n_mod * seg).map(|_| r.gen_range(1e-6..1.0)).collect();
        let coeffs = modality_coefficients(&gate, &boundaries).unwrap();
        assert_eq!(coeffs.len(), n_mod);
        let sum: f64 = coeffs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
        for &c in &coeffs {
            assert!(c > 0.0 && c < 1.0, "coefficient {c} outside (0,1)");
        }
    }

    // Exact invariances, checked on dyadic gate values so that the reference
    // arithmetic itself is exact.
    let mut r = rng::stream(102, "acceptance/invariance");
    for _ in 0..100 {
        let gate: Vec<f64> = (0..n_mod * seg)
            .map(|_| r.gen_range(1u32..1024) as f64 / 1024.0)
            .collect();
        let base = modality_coefficients(&gate, &boundaries).unwrap();

        // Positive scaling by a power of two is exact in binary floating
        // point, so the normalized coefficients must be bitwise identical.
        let scaled: Vec<f64> = gate.iter().map(|g| g * 4.0).collect();
        let got = modality_coefficients(&scaled, &boundaries).unwrap();
        assert_eq!(base, got, "scaling invariance violated");

        // Swapping two whole segments swaps exactly those two coefficients.
        let mut permuted = gate.clone();
        swap_segments(&mut permuted, seg, 1, 2);
        let got = modality_coefficients(&permuted, &boundaries).unwrap();
        let mut expect = base.clone();
        expect.swap(1, 2);
        assert_eq!(expect, got, "permutation invariance violated");
    }
}

fn swap_segments(v: &mut [f64], seg: usize, a: usize, b: usize) {
    for k in 0..seg {
        v.swap(a * seg + k, b * seg + k);
    }
}

// ---------------------------------------------------------------------------
// Criterion 2: regularizer correctness.
// ---------------------------------------------------------------------------

#[test]
fn c2_bias_gap_hand_cases() {
    // Zero iff equal.
    let u = vec![0.25; 4];
    assert_eq!(bias_gap(&u, &u).unwrap(), 0.0);
    let v = vec![0.25 + 1e-12, 0.25 - 1e-12, 0.25, 0.25];
    assert!(bias_gap(&u, &v).unwrap() > 0.0);

    // Hand-derived: 0.3^2 + 3 * 0.1^2 = 0.12.
    let rrmc = vec![0.25, 0.25, 0.25, 0.25];
    let trmc = vec![0.55, 0.15, 0.15, 0.15];
    let gap = bias_gap(&rrmc, &trmc).unwrap();
    assert!((gap - 0.12).abs() <= 1e-9, "gap {gap}");

    // Maximal disagreement between coefficient vectors is exactly 2.
    let a = vec![1.0, 0.0, 0.0, 0.0];
    let b = vec![0.0, 1.0, 0.0, 0.0];
    assert_eq!(bias_gap(&a, &b).unwrap(), 2.0);
}

// ---------------------------------------------------------------------------
// Criterion 3: gradient checks for attend() and the stage-2 loss on a
// 2-class, 8-dimensional toy model.
// ---------------------------------------------------------------------------

fn toy_cfg() -> ModelConfig {
    // Latent: 4 modalities x 2 channels x 1x1 = 8 dims.
    ModelConfig {
        num_modalities: 4,
        input_resolution: 2,
        encoder_channels: vec![2],
        modality_channels: vec![1, 1, 1, 1],
        num_classes: 2,
        attention_filters: 4,
        attention_kernel: 2,
    }
}

fn toy_latents(cfg: &ModelConfig, n: usize, seed: u64) -> LatentBundle {
    let mut r = rng::stream(seed, "acceptance/latents");
    let c = cfg.num_modalities * cfg.latent_channels();
    let hw = cfg.feature_hw();
    LatentBundle {
        maps: Array4::from_shape_fn((n, c, hw, hw), |_| r.gen_range(0.0..1.0f32)),
        num_modalities: cfg.num_modalities,
        boundaries: cfg.segment_boundaries(),
    }
}

/// Central finite difference with Richardson extrapolation; returns `None`
/// when the estimate is unstable (a ReLU kink inside the interval).
fn finite_difference(f: &dyn Fn(f32) -> f64, eps1: f32, eps2: f32) -> Option<f64> {
    let fd = |e: f32| (f(e) - f(-e)) / (2.0 * e as f64);
    let fd1 = fd(eps1);
    let fd2 = fd(eps2);
    if (fd1 - fd2).abs() > 3e-4f64.max(0.02 * fd2.abs()) {
        return None;
    }
    Some((4.0 * fd2 - fd1) / 3.0)
}

#[test]
fn c3_attend_gradients_match_finite_differences() {
    // attend(z, a) = sigmoid(a) .* z, reduced to a scalar by a weighted sum
    // so every coordinate receives a distinct gradient.
    let mut r = rng::stream(7, "acceptance/attend");
    let dims = [2usize, 8, 1, 1];
    let z0 = ArrayD::from_shape_fn(dims.as_slice(), |_| r.gen_range(-1.0..1.0f32));
    let a0 = ArrayD::from_shape_fn(dims.as_slice(), |_| r.gen_range(-1.0..1.0f32));
    let w = ArrayD::from_shape_fn(dims.as_slice(), |_| r.gen_range(-1.0..1.0f32));

    let loss_of = |z: &ArrayD<f32>, a: &ArrayD<f32>| -> f64 {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let av = tape.constant(a.clone());
        let out = attend(&mut tape, zv, av);
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv);
        let sum = tape.mean_all(prod);
        tape.value(sum).iter().next().copied().unwrap() as f64
    };

    let mut tape = Tape::new();
    let zv = tape.param(z0.clone());
    let av = tape.param(a0.clone());
    let out = attend(&mut tape, zv, av);
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv);
    let sum = tape.mean_all(prod);
    let grads = tape.backward(sum);
    let gz = grads.get(zv).unwrap().clone();
    let ga = grads.get(av).unwrap().clone();

    let mut checked = 0;
    for k in 0..z0.len() {
        for (x0, g, which) in [(&z0, &gz, "z"), (&a0, &ga, "a")] {
            let f = |e: f32| {
                let mut x = x0.clone();
                x.as_slice_mut().unwrap()[k] += e;
                if which == "z" {
                    loss_of(&x, &a0)
                } else {
                    loss_of(&z0, &x)
                }
            };
            // attend is smooth, so no kink-skip should trigger here.
            let fd = finite_difference(&f, 2e-3, 1e-3).expect("smooth function");
            let ad = g.as_slice().unwrap()[k] as f64;
            let err = (ad - fd).abs() / ad.abs().max(1.0);
            assert!(err < 1e-3, "{which}[{k}]: ad={ad} fd={fd} err={err}");
            checked += 1;
        }
    }
    assert!(checked >= 32);
}

#[test]
fn c3_stage2_loss_gradients_match_finite_differences() {
    let cfg = toy_cfg();
    let model = CognitiveModel::new(cfg.clone(), 33).unwrap();
    let z = toy_latents(&cfg, 4, 5);
    let labels = [0usize, 1, 1, 0];
    let rrmc = [0.3f32, 0.3, 0.2, 0.2];

    let loss_of = |params: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let binding = Binding::bind(&mut tape, params, |_| false);
        let zv = tape.constant(z.maps.clone().into_dyn());
        let (terms, _) =
            stage2_forward(&mut tape, &binding, &cfg, zv, &labels, Some(&rrmc), 1.0, None);
        tape.value(terms.total).iter().next().copied().unwrap() as f64
    };

    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, is_stage2_param);
    let zv = tape.constant(z.maps.clone().into_dyn());
    let (terms, _) =
        stage2_forward(&mut tape, &binding, &cfg, zv, &labels, Some(&rrmc), 1.0, None);
    let grads = tape.backward(terms.total);

    let mut checked = 0;
    for name in model.params.names() {
        if !is_stage2_param(name) {
            continue;
        }
        let g = match grads.get(binding.var(name)) {
            Some(g) => g.clone(),
            None => continue,
        };
        let len = g.len();
        for k in (0..len).step_by((len / 5).max(1)) {
            let f = |e: f32| {
                let mut p = model.params.clone();
                p.get_mut(name).unwrap().as_slice_mut().unwrap()[k] += e;
                loss_of(&p)
            };
            let Some(fd) = finite_difference(&f, 2e-3, 1e-3) else {
                continue; // ReLU kink inside the perturbation interval
            };
            let ad = g.as_slice().unwrap()[k] as f64;
            let err = (ad - fd).abs() / ad.abs().max(1.0);
            assert!(err < 1e-3, "{name}[{k}]: ad={ad} fd={fd} err={err}");
            checked += 1;
        }
    }
    assert!(checked >= 20, "only {checked} coordinates checked");
}

// ---------------------------------------------------------------------------
// Criterion 4: classical-vision oracles.
// ---------------------------------------------------------------------------

/// Independent Canny reference: direct (non-separable) Gaussian convolution,
/// Sobel, four-direction non-maximum suppression, Otsu threshold over 256
/// bins and BFS hysteresis. Mirrors the documented algorithm, written from
/// scratch.
mod canny_oracle {
    use super::*;

    pub fn run(grey: &GreyImage, sigma: f32, low_ratio: f32) -> BinaryMask {
        let (w, h) = (grey.width(), grey.height());
        let radius = (3.0 * sigma).ceil() as isize;
        let k1: Vec<f32> = (-radius..=radius)
            .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f32 = k1.iter().sum();
        let clampf = |v: isize, max: usize| v.clamp(0, max as isize - 1) as usize;
        // Full 2D convolution with the outer product of the 1D kernel,
        // edge-clamped.
        let mut blurred = vec![0.0f32; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for (j, &ky) in k1.iter().enumerate() {
                    for (i, &kx) in k1.iter().enumerate() {
                        let sx = clampf(x + i as isize - radius, w);
                        let sy = clampf(y + j as isize - radius, h);
                        acc += ky / norm * kx / norm * grey.get(sx, sy);
                    }
                }
                blurred[y as usize * w + x as usize] = acc;
            }
        }
        let at = |x: isize, y: isize| blurred[clampf(y, h) * w + clampf(x, w)];
        let mut gx = vec![0.0f32; w * h];
        let mut gy = vec![0.0f32; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                gx[i] = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                    - at(x - 1, y - 1)
                    - 2.0 * at(x - 1, y)
                    - at(x - 1, y + 1);
                gy[i] = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                    - at(x - 1, y - 1)
                    - 2.0 * at(x, y - 1)
                    - at(x + 1, y - 1);
            }
        }
        let mag: Vec<f32> = gx
            .iter()
            .zip(&gy)
            .map(|(&a, &b)| {
                let m = (a * a + b * b).sqrt();
                if m < 1e-4 {
                    0.0
                } else {
                    m
                }
            })
            .collect();
        // Non-maximum suppression along the quantized gradient direction.
        let getm = |x: isize, y: isize| {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                0.0
            } else {
                mag[y as usize * w + x as usize]
            }
        };
        let mut thin = vec![0.0f32; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                if mag[i] == 0.0 {
                    continue;
                }
                let mut angle = gy[i].atan2(gx[i]).to_degrees();
                if angle < 0.0 {
                    angle += 180.0;
                }
                let (d1, d2) = if !(22.5..157.5).contains(&angle) {
                    ((1, 0), (-1, 0))
                } else if angle < 67.5 {
                    ((1, 1), (-1, -1))
                } else if angle < 112.5 {
                    ((0, 1), (0, -1))
                } else {
                    ((1, -1), (-1, 1))
                };
                if mag[i] >= getm(x + d1.0, y + d1.1) && mag[i] >= getm(x + d2.0, y + d2.1) {
                    thin[i] = mag[i];
                }
            }
        }
        // Otsu over 256 bins of the positive values, maximizing the
        // between-class variance computed directly for every split.
        let max = thin.iter().cloned().fold(0.0f32, f32::max);
        let high = if max <= 0.0 {
            0.0
        } else {
            const BINS: usize = 256;
            let bins: Vec<usize> = thin
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| (((v / max) * (BINS as f32 - 1.0)).round() as usize).min(BINS - 1))
                .collect();
            let mut best = (f64::NEG_INFINITY, bins.iter().max().copied().unwrap_or(0));
            for t in 0..BINS {
                let (c0, c1): (Vec<&usize>, Vec<&usize>) = bins.iter().partition(|&&b| b <= t);
                if c0.is_empty() || c1.is_empty() {
                    continue;
                }
                let m0 = c0.iter().map(|&&b| b as f64).sum::<f64>() / c0.len() as f64;
                let m1 = c1.iter().map(|&&b| b as f64).sum::<f64>() / c1.len() as f64;
                let between = c0.len() as f64 * c1.len() as f64 * (m0 - m1) * (m0 - m1)
                    / (bins.len() as f64 * bins.len() as f64);
                if between > best.0 {
                    best = (between, t);
                }
            }
            best.1 as f32 / 255.0 * max
        };
        let low = low_ratio * high;
        // BFS hysteresis from strong pixels over 8-connected weak pixels.
        let mut edge = vec![false; w * h];
        if high > 0.0 {
            let mut queue: std::collections::VecDeque<usize> = (0..w * h)
                .filter(|&i| thin[i] >= high)
                .inspect(|&i| edge[i] = true)
                .collect();
            while let Some(i) = queue.pop_front() {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if !edge[j] && thin[j] >= low {
                            edge[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        BinaryMask::new(w, h, edge).unwrap()
    }
}

#[test]
fn c4_canny_matches_brute_force_reference_on_step() {
    // 16x16 vertical step: black left half, white right half.
    let mut img = RgbImage::filled(16, 16, [1.0, 1.0, 1.0]);
    for y in 0..16 {
        for x in 0..8 {
            img.set(x, y, [0.0, 0.0, 0.0]);
        }
    }
    let cfg = CannyConfig::default();
    let got = extract_edges(&img, &cfg);

    let grey_data: Vec<f32> = img
        .pixels()
        .iter()
        .map(|p| if p[0] > 0.5 { 1.0 } else { 0.0 })
        .collect();
    let grey = GreyImage::new(16, 16, grey_data).unwrap();
    let expect = canny_oracle::run(&grey, cfg.sigma, cfg.low_ratio);
    assert!(got.count_set() > 0, "step edge lost entirely");
    assert_eq!(got, expect, "detector disagrees with reference pipeline");
}

#[test]
fn c4_silhouette_fills_annulus_hole() {
    // Dark ring on white background; the enclosed white disk is not
    // background-connected and must be part of the silhouette.
    let size = 64usize;
    let c = size as f32 / 2.0;
    let mut img = RgbImage::filled(size, size, [1.0, 1.0, 1.0]);
    for y in 0..size {
        for x in 0..size {
            let d = ((x as f32 - c).powi(2) + (y as f32 - c).powi(2)).sqrt();
            if (12.0..20.0).contains(&d) {
                img.set(x, y, [0.2, 0.2, 0.2]);
            }
        }
    }
    let sil = extract_silhouette(&img, DEFAULT_WHITE_THRESH).unwrap();
    for y in 0..size {
        for x in 0..size {
            let d = ((x as f32 - c).powi(2) + (y as f32 - c).powi(2)).sqrt();
            if d < 11.0 {
                assert!(sil.get(x, y), "hole pixel ({x},{y}) not filled");
            }
            if d > 21.0 {
                assert!(!sil.get(x, y), "background pixel ({x},{y}) marked");
            }
        }
    }
}

#[test]
fn c4_quilting_zero_overlap_error_on_checkerboard() {
    // Period-4 checkerboard; patch size a multiple of the period means a
    // perfectly matching source window always exists, so the quilt must
    // achieve zero overlap error: the output continues the periodic pattern.
    let period = 4usize;
    let mut src = RgbImage::filled(32, 32, [0.0, 0.0, 0.0]);
    for y in 0..32 {
        for x in 0..32 {
            if (x / period + y / period) % 2 == 0 {
                src.set(x, y, [1.0, 1.0, 1.0]);
            }
        }
    }
    let cfg = TextureSynthConfig {
        patch_size: 16,
        overlap: 4,
        output_size: 48,
        rng_seed: 5,
        candidate_tolerance: 0.0,
    };
    let out = synthesize_texture(&src, &cfg).unwrap();
    for y in 0..48 {
        for x in 0..48 {
            let expect = out.get(x % (2 * period), y % (2 * period));
            assert_eq!(out.get(x, y), expect, "seam error at ({x},{y})");
        }
    }
    // Bit-reproducible under a fixed seed.
    let again = synthesize_texture(&src, &cfg).unwrap();
    assert_eq!(out, again);
}

#[test]
fn c4_min_cut_matches_exhaustive_search() {
    // Brute-force enumeration of every monotone (|step| <= 1) cut path on a
    // small band, compared against the DP boundary cut.
    fn all_paths(overlap: usize, rows: usize) -> Vec<Vec<usize>> {
        let mut paths: Vec<Vec<usize>> = (0..overlap).map(|x| vec![x]).collect();
        for _ in 1..rows {
            let mut next = Vec::new();
            for p in &paths {
                let x = *p.last().unwrap();
                for nx in x.saturating_sub(1)..=(x + 1).min(overlap - 1) {
                    let mut q = p.clone();
                    q.push(nx);
                    next.push(q);
                }
            }
            paths = next;
        }
        paths
    }
    let mut r = rng::stream(17, "acceptance/mincut");
    for _ in 0..20 {
        // A three-patch-row band, full-width overlap.
        let p = 3usize;
        let overlap = 3usize;
        let err: Vec<f64> = (0..p * p).map(|_| r.gen_range(0.0..10.0)).collect();
        let cut = vertical_cut(&err, p, overlap);
        let cut_cost: f64 = cut.iter().enumerate().map(|(y, &x)| err[y * p + x]).sum();
        let best = all_paths(overlap, p)
            .iter()
            .map(|path| path.iter().enumerate().map(|(y, &x)| err[y * p + x]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert!(
            (cut_cost - best).abs() < 1e-12,
            "dp cut cost {cut_cost} vs exhaustive {best}"
        );
    }
}

#[test]
fn c4_preprocessing_bit_reproducible() {
    let cfg = SynthConfig {
        num_classes: 2,
        per_class: 10,
        resolution: 128,
        label_mode: LabelMode::Composite,
        rng_seed: 3,
        ..Default::default()
    };
    let tex = TextureSynthConfig { patch_size: 16, overlap: 6, ..Default::default() };
    let data = generate_synthetic_dataset(&cfg).unwrap();
    let a = extract_modalities(&data.train[0].image, &tex, 64, "ex0").unwrap();
    let b = extract_modalities(&data.train[0].image, &tex, 64, "ex0").unwrap();
    assert_eq!(a.shape, b.shape);
    assert_eq!(a.texture, b.texture);
    assert_eq!(a.greyscale, b.greyscale);
    assert_eq!(a.edges, b.edges);
}

// ---------------------------------------------------------------------------
// Criteria 5-8 train real models on the synthetic benchmark; they share the
// configuration below and (for 7/8) one experiment run per process.
// ---------------------------------------------------------------------------

fn bench_config() -> cogcnn::experiment::ExperimentConfig {
    use cogcnn::baseline::BaselineTrainConfig;
    use cogcnn::train::{Stage1Config, Stage2Config};
    cogcnn::experiment::ExperimentConfig {
        name: "acceptance".into(),
        seeds: vec![1, 2, 3],
        resolution: 64,
        models: ["baseline", "cog4uc", "cog4rc", "cueaug"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        encoder_channels: vec![8, 16, 32],
        attention_filters: 32,
        data: SynthConfig {
            num_classes: 8,
            per_class: 60,
            resolution: 128,
            label_mode: LabelMode::Composite,
            rng_seed: 0,
            ..Default::default()
        },
        texture: TextureSynthConfig { patch_size: 16, overlap: 6, ..Default::default() },
        stage1: Stage1Config {
            max_epochs: 15,
            batch_size: 16,
            target_mse: Some(0.01),
            ..Default::default()
        },
        // Stage 2 trains well past convergence: cross-entropy keeps pushing
        // the unregularized prediction gate away from the reconstruction
        // profile, which is the drift the regularizer is meant to prevent.
        stage2: Stage2Config {
            learning_rate: 2e-3,
            max_epochs: 120,
            patience: 120,
            batch_size: 16,
            ..Default::default()
        },
        baseline: BaselineTrainConfig {
            max_epochs: 60,
            patience: 25,
            batch_size: 16,
            ..Default::default()
        },
    }
}

/// One shared experiment run for criteria 7 and 8; each test still works
/// standalone because the first caller performs the run.
fn shared_outcome() -> &'static cogcnn::experiment::ExperimentOutcome {
    use std::sync::OnceLock;
    static OUTCOME: OnceLock<(tempfile::TempDir, cogcnn::experiment::ExperimentOutcome)> =
        OnceLock::new();
    let (_dir, outcome) = OUTCOME.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let outcome = cogcnn::experiment::run_experiment(&bench_config(), dir.path()).unwrap();
        (dir, outcome)
    });
    outcome
}

// ---------------------------------------------------------------------------
// Criterion 5: stage-1 convergence on the 8-class, 800-image synthetic
// dataset at 64x64: reconstruction MSE < 0.01 within 100 epochs.
// ---------------------------------------------------------------------------

#[test]
fn c5_stage1_reconstruction_converges() {
    use cogcnn::dataset::tensorize_synthetic;
    use cogcnn::model::ModelConfig;
    use cogcnn::train::{train_stage1, Stage1Config, Stage1Data};

    let data_cfg = SynthConfig {
        num_classes: 8,
        per_class: 100, // 800 images total
        resolution: 128,
        label_mode: LabelMode::Composite,
        rng_seed: 5,
        ..Default::default()
    };
    let tex = TextureSynthConfig { patch_size: 16, overlap: 6, ..Default::default() };
    let data = generate_synthetic_dataset(&data_cfg).unwrap();
    let train = tensorize_synthetic(&data.train, &tex, 64).unwrap();
    let val = tensorize_synthetic(&data.val, &tex, 64).unwrap();

    let mcfg = ModelConfig {
        input_resolution: 64,
        encoder_channels: vec![8, 16, 32],
        attention_filters: 32,
        num_classes: 8,
        ..Default::default()
    };
    let mut model = CognitiveModel::new(mcfg, 5).unwrap();
    let tcfg = Stage1Config {
        max_epochs: 100,
        batch_size: 16,
        patience: 100, // only the MSE target stops training early
        target_mse: Some(0.01),
        rng_seed: 5,
        ..Default::default()
    };
    let to_stage1 = |t: &cogcnn::dataset::TensorDataset| Stage1Data {
        modalities: t.data.modalities.clone(),
        images: t.data.images.clone(),
    };
    let state = train_stage1(&mut model, &to_stage1(&train), &to_stage1(&val), &tcfg).unwrap();
    assert!(
        state.reached_target,
        "validation MSE {:.5} after {} epochs (target 0.01)",
        state.best_metric,
        state.records.len()
    );
    assert!(state.records.len() <= 100);
}

// ---------------------------------------------------------------------------
// Criterion 6: directional relevance. When only one cue determines the
// label, the trained prediction gate's TRMC ranks that cue's modality
// first in at least 2 of 3 seeds.
// ---------------------------------------------------------------------------

fn trmc_winner_counts(label_mode: LabelMode, modality: usize) -> usize {
    let cfg = cogcnn::experiment::ExperimentConfig {
        models: vec!["cog4uc".into()],
        data: SynthConfig { label_mode, ..bench_config().data },
        ..bench_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let outcome = cogcnn::experiment::run_experiment(&cfg, dir.path()).unwrap();
    outcome
        .seeds
        .iter()
        .filter(|s| {
            let trmc = &s.relevance["cog4uc"].trmc;
            let winner = trmc
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            winner == modality
        })
        .count()
}

#[test]
fn c6_trmc_tracks_the_label_determining_cue() {
    let shape_wins = trmc_winner_counts(LabelMode::ShapeDetermined, 0);
    assert!(shape_wins >= 2, "TRMC_shape largest in only {shape_wins}/3 seeds");
    let texture_wins = trmc_winner_counts(LabelMode::TextureDetermined, 1);
    assert!(texture_wins >= 2, "TRMC_texture largest in only {texture_wins}/3 seeds");
}

// ---------------------------------------------------------------------------
// Criterion 7: regularization effect. Mean held-out bias gap of the
// regularized model is strictly lower than the unregularized one.
// ---------------------------------------------------------------------------

#[test]
fn c7_regularizer_reduces_bias_gap() {
    let outcome = shared_outcome();
    let mean = outcome.mean_relevance();
    let reg = mean["cog4rc"].gap;
    let unreg = mean["cog4uc"].gap;
    assert!(
        reg < unreg,
        "regularized gap {reg:.4} not below unregularized {unreg:.4}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: cue-conflict robustness pattern, averaged over 3 seeds.
// ---------------------------------------------------------------------------

#[test]
fn c8_miscue_robustness_ordering() {
    let outcome = shared_outcome();
    let mean = outcome.mean_evals();
    let acc = |m: &str| mean[m].miscue_shape_accuracy * 100.0;
    let clean = |m: &str| mean[m].clean_accuracy * 100.0;

    // (a) ordering with >= 5pp margins between 4-stream variants and the
    // conventional baseline.
    assert!(
        acc("cog4rc") > acc("cog4uc"),
        "4RC miscue {:.1} not above 4UC {:.1}",
        acc("cog4rc"),
        acc("cog4uc")
    );
    for m in ["cog4rc", "cog4uc"] {
        assert!(
            acc(m) >= acc("baseline") + 5.0,
            "{m} miscue {:.1} lacks 5pp margin over baseline {:.1}",
            acc(m),
            acc("baseline")
        );
    }
    // (b) cue augmentation helps clean accuracy but not robustness.
    assert!(
        clean("cueaug") >= clean("baseline"),
        "cueaug clean {:.1} below baseline {:.1}",
        clean("cueaug"),
        clean("baseline")
    );
    for m in ["cog4rc", "cog4uc"] {
        assert!(
            acc("cueaug") < acc(m),
            "cueaug miscue {:.1} not below {m} {:.1}",
            acc("cueaug"),
            acc(m)
        );
    }
    // (c) regularization costs at most 1pp of clean accuracy.
    assert!(
        clean("cog4rc") >= clean("cog4uc") - 1.0,
        "4RC clean {:.1} more than 1pp below 4UC {:.1}",
        clean("cog4rc"),
        clean("cog4uc")
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: report fidelity. Table 1's structure (shared RRMC column,
// per-model TRMC columns, one-decimal percentages), byte-stable across
// reruns of the same log.
// ---------------------------------------------------------------------------

#[test]
fn c9_reports_are_structured_and_byte_stable() {
    use cogcnn::baseline::EvalSummary;
    use cogcnn::experiment::{emit_reports, render_table1, render_table2};
    use cogcnn::relevance::{RelevanceReport, ReportScope};
    use std::collections::BTreeMap;

    let names: Vec<String> =
        ["shape", "texture", "greyscale", "edges"].iter().map(|s| s.to_string()).collect();
    let mut reports = BTreeMap::new();
    reports.insert(
        "cog4rc".to_string(),
        RelevanceReport::new(
            names.clone(),
            vec![0.237, 0.223, 0.304, 0.234],
            vec![0.236, 0.225, 0.303, 0.236],
            ReportScope::DatasetMean,
        )
        .unwrap(),
    );
    reports.insert(
        "cog4uc".to_string(),
        RelevanceReport::new(
            names,
            vec![0.237, 0.223, 0.304, 0.234],
            vec![0.312, 0.198, 0.271, 0.219],
            ReportScope::DatasetMean,
        )
        .unwrap(),
    );
    let t1 = render_table1(&reports);
    // One shared RRMC column plus one TRMC column per model.
    let header = t1.lines().find(|l| l.contains("RRMC")).unwrap();
    assert_eq!(header.matches("RRMC").count(), 1);
    assert!(header.contains("TRMC(cog4uc)") && header.contains("TRMC(cog4rc)"));
    // Every percentage printed with exactly one decimal place.
    assert!(t1.contains("23.7") && t1.contains("30.4"));
    for line in t1
        .lines()
        .filter(|l| l.starts_with(char::is_alphabetic) && !l.starts_with("gap"))
    {
        for tok in line.split_whitespace().skip(1) {
            if let Some((_, frac)) = tok.split_once('.') {
                assert_eq!(frac.len(), 1, "token {tok} not one-decimal in {line}");
            }
        }
    }

    let mut evals = BTreeMap::new();
    evals.insert(
        "baseline".to_string(),
        EvalSummary {
            clean_accuracy: 0.583,
            miscue_shape_accuracy: 0.145,
            miscue_texture_rate: 0.62,
        },
    );
    evals.insert(
        "cog4rc".to_string(),
        EvalSummary {
            clean_accuracy: 0.618,
            miscue_shape_accuracy: 0.569,
            miscue_texture_rate: 0.21,
        },
    );
    let t2 = render_table2(&evals);
    assert!(t2.contains("58.3") && t2.contains("14.5") && t2.contains("61.8"));

    // Byte stability: rendering the same data twice is identical, and
    // emitting the same outcome twice produces identical files.
    assert_eq!(t1, render_table1(&reports));
    assert_eq!(t2, render_table2(&evals));

    let outcome = cogcnn::experiment::ExperimentOutcome {
        config_hash: "test".into(),
        seeds: vec![cogcnn::experiment::SeedOutcome {
            seed: 1,
            evals: evals.clone(),
            relevance: reports.clone(),
        }],
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    emit_reports(&outcome, d1.path()).unwrap();
    emit_reports(&outcome, d2.path()).unwrap();
    for f in ["table1.txt", "table1.json", "table2.txt", "table2.json"] {
        let a = std::fs::read(d1.path().join("reports").join(f)).unwrap();
        let b = std::fs::read(d2.path().join("reports").join(f)).unwrap();
        assert_eq!(a, b, "{f} not byte-stable");
    }
}
