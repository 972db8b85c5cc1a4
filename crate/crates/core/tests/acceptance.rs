//! Acceptance criteria, one PASS/FAIL line each.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{fd_max_error, random_input, Inputs};
use docdiff::data::synth::BlurKernel;
use docdiff::data::{decode, degrade, encode, generate_pair, Corpus, CorpusKind, DegradationSpec, ImageBuffer};
use docdiff::freqsep::{decompose, highpass, loss_high, loss_low, lowpass, total_loss, LossWeights};
use docdiff::inference::{coarse_only, enhance, refine_external, Mode, Pipeline, TilePlan, Weights};
use docdiff::metrics::{f_measure, otsu_threshold, pseudo_f_measure, psnr, ssim, zhang_suen, BinaryImage};
use docdiff::model::{ModelBundle, ParamSet, Prediction};
use docdiff::numerics::{
    add, add_channel_bias, concat_channels, conv2d, linear, mean, mean_square, mse_mean, mul, scale, scale_per_sample,
    silu, slice_channels, sub, upsample_nearest, Conv2dArgs, Tensor,
};
use docdiff::rng::{normal_vec, seeded, uniform_vec, Rng};
use docdiff::schedule::NoiseSchedule;
use docdiff::trainer::{compute_losses, read_checkpoint, sample_timesteps, write_checkpoint, ResidualGrad, TrainConfig, Trainer};
use docdiff::Result;
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(id: &str, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let pass = o.pass && took <= budget;
    println!(
        "{} criterion {id} {name}: {} [{:.1}s / {:.0}s]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64(),
        budget.as_secs_f64()
    );
    pass
}

// 1

fn schedule_correctness() -> Outcome {
    let s = NoiseSchedule::default_linear();
    let mut oracle = 1.0f64;
    for t in 1..=100 {
        oracle *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 99.0);
    }
    let decreasing = (1..=100).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1));
    let err = (s.alpha_bar(100) - oracle).abs();
    outcome(
        s.alpha_bar(0) == 1.0 && decreasing && err <= 1e-9,
        format!("alpha_bar_100={:.12} oracle error {err:.1e}", s.alpha_bar(100)),
    )
}

// 2

struct Oracle {
    schedule: NoiseSchedule,
    residual: ImageBuffer,
}

impl Pipeline for Oracle {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
    fn coarse(&self, y: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(y.clone())
    }
    fn denoise(&self, _: &ImageBuffer, _: usize, _: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(self.residual.clone())
    }
}

fn unit_image(rng: &mut Rng, w: usize, h: usize) -> ImageBuffer {
    let v = (0..w * h).map(|_| rng.random::<f32>()).collect();
    ImageBuffer::new(w, h, 1, v).unwrap()
}

fn oracle_sampler() -> Outcome {
    let mut worst = 0.0f32;
    let mut rng = seeded(2);
    for case in 0..10 {
        let coarse = unit_image(&mut rng, 32, 32);
        let gt = unit_image(&mut rng, 32, 32);
        let pipe = Oracle {
            schedule: NoiseSchedule::default_linear(),
            residual: gt.sub(&coarse).unwrap(),
        };
        for steps in [1, 5, 20, 100] {
            let out = enhance(&pipe, &coarse, steps, Mode::Full, case).unwrap();
            let want = coarse.add(&pipe.residual).unwrap();
            for (a, b) in out.pixels().iter().zip(want.pixels()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    outcome(worst <= 1e-5, format!("max abs error {worst:.2e} over 10 cases x K in {{1,5,20,100}}"))
}

// 3

type Case = (Inputs, Box<dyn Fn(&[Tensor]) -> Tensor>);

fn shape4(rng: &mut Rng, max_c: usize, lo: usize, hi: usize) -> Vec<usize> {
    vec![rng.random_range(1..=2), rng.random_range(1..=max_c), rng.random_range(lo..=hi), rng.random_range(lo..=hi)]
}

fn unary(rng: &mut Rng, f: fn(&Tensor) -> Tensor, amp: f32) -> Case {
    let s = shape4(rng, 3, 3, 5);
    let mut x = random_input(rng, &s);
    x.1.iter_mut().for_each(|v| *v *= amp);
    (vec![x], Box::new(move |t| f(&t[0])))
}

fn binary(rng: &mut Rng, f: fn(&Tensor, &Tensor) -> Tensor) -> Case {
    let s = shape4(rng, 3, 3, 5);
    (vec![random_input(rng, &s), random_input(rng, &s)], Box::new(move |t| f(&t[0], &t[1])))
}

fn gradient_cases() -> Vec<(&'static str, fn(&mut Rng) -> Case)> {
    vec![
        ("add", |r| binary(r, |a, b| add(a, b).unwrap())),
        ("sub", |r| binary(r, |a, b| sub(a, b).unwrap())),
        ("mul", |r| binary(r, |a, b| mul(a, b).unwrap())),
        ("mse_mean", |r| binary(r, |a, b| mse_mean(a, b).unwrap())),
        ("loss_low", |r| binary(r, |a, b| loss_low(a, b).unwrap())),
        ("loss_high", |r| binary(r, |a, b| loss_high(a, b).unwrap())),
        ("silu", |r| unary(r, silu, 4.0)),
        ("scale", |r| unary(r, |a| scale(a, -1.5), 1.0)),
        ("mean", |r| unary(r, mean, 1.0)),
        ("mean_square", |r| unary(r, mean_square, 1.0)),
        ("highpass", |r| unary(r, |a| highpass(a).unwrap(), 1.0)),
        ("lowpass", |r| unary(r, |a| lowpass(a).unwrap(), 1.0)),
        ("upsample_nearest", |r| unary(r, |a| upsample_nearest(a, 2).unwrap(), 1.0)),
        ("scale_per_sample", |r| {
            let s = vec![2, 2, 3, 3];
            let c: Vec<f32> = (0..2).map(|_| r.random_range(-2.0..2.0f32)).collect();
            (vec![random_input(r, &s)], Box::new(move |t| scale_per_sample(&t[0], &c).unwrap()))
        }),
        ("concat_channels", |r| {
            let a = shape4(r, 2, 2, 4);
            let mut b = a.clone();
            b[1] = r.random_range(1..=3);
            (vec![random_input(r, &a), random_input(r, &b)], Box::new(|t| concat_channels(&t[0], &t[1]).unwrap()))
        }),
        ("slice_channels", |r| {
            let mut s = shape4(r, 2, 2, 4);
            s[1] = 3;
            let start = r.random_range(0..3);
            (vec![random_input(r, &s)], Box::new(move |t| slice_channels(&t[0], start, 3 - start).unwrap()))
        }),
        ("add_channel_bias", |r| {
            let s = shape4(r, 3, 2, 4);
            (vec![random_input(r, &s), random_input(r, &[s[0], s[1]])], Box::new(|t| add_channel_bias(&t[0], &t[1]).unwrap()))
        }),
        ("linear", |r| {
            let (n, i, o) = (r.random_range(1..=3), r.random_range(1..=5), r.random_range(1..=4));
            let inputs = vec![random_input(r, &[n, i]), random_input(r, &[o, i]), random_input(r, &[o])];
            (inputs, Box::new(|t| linear(&t[0], &t[1], Some(&t[2])).unwrap()))
        }),
        ("conv2d", |r| {
            let (n, ci, co) = (r.random_range(1..=2), r.random_range(1..=2), r.random_range(1..=2));
            let args = Conv2dArgs::new(r.random_range(1..=2), r.random_range(0..=2), r.random_range(1..=2));
            let hw = r.random_range(6..=8);
            let inputs = vec![random_input(r, &[n, ci, hw, hw]), random_input(r, &[co, ci, 3, 3]), random_input(r, &[co])];
            (inputs, Box::new(move |t| conv2d(&t[0], &t[1], Some(&t[2]), args).unwrap()))
        }),
        ("total_loss", |r| {
            let s = shape4(r, 2, 3, 5);
            let inputs = [(0.5, 0.5), (0.5, 0.5), (0.5, 0.0), (0.5, 0.0)]
                .iter()
                .map(|&(k, c)| {
                    let (s, d) = random_input(r, &s);
                    (s, d.iter().map(|v| k * v + c).collect())
                })
                .collect();
            (inputs, Box::new(|t| total_loss(&t[0], &t[1], &t[2], &t[3], LossWeights::default()).unwrap().total))
        }),
        ("q_sample_batch", |r| {
            let s = shape4(r, 2, 1, 4);
            let ts: Vec<usize> = (0..s[0]).map(|_| r.random_range(1..=100)).collect();
            let sch = NoiseSchedule::default_linear();
            (
                vec![random_input(r, &s), random_input(r, &s)],
                Box::new(move |t| sch.q_sample_batch(&t[0], &ts, &t[1]).unwrap()),
            )
        }),
    ]
}

fn gradient_fidelity() -> Outcome {
    let mut rng = seeded(3);
    let mut worst = ("", 0.0f64);
    let cases = gradient_cases();
    for (name, make) in &cases {
        for _ in 0..20 {
            let (inputs, f) = make(&mut rng);
            let e = fd_max_error(&mut rng, &inputs, f.as_ref());
            if e > worst.1 {
                worst = (name, e);
            }
        }
    }
    outcome(
        worst.1 <= 1e-3,
        format!("{} ops x 20 trials, worst {} at {:.2e}", cases.len(), worst.0, worst.1),
    )
}

// 4

fn grad_norm(set: &ParamSet) -> f64 {
    set.values().filter_map(|t| t.grad()).flatten().map(|g| (g as f64).powi(2)).sum::<f64>().sqrt()
}

fn stop_gradient() -> Outcome {
    let corpus = Corpus::synthetic(CorpusKind::Blur, 2, 32, 4).unwrap();
    let ys: Vec<_> = corpus.pairs.iter().map(|p| p.0.clone()).collect();
    let gts: Vec<_> = corpus.pairs.iter().map(|p| p.1.clone()).collect();
    let (y, gt) = (ImageBuffer::stack(&ys).unwrap(), ImageBuffer::stack(&gts).unwrap());
    let mut rng = seeded(5);
    let ts = sample_timesteps(&mut rng, 2, 100);
    let eps = Tensor::from_vec(y.shape(), normal_vec(&mut rng, y.numel())).unwrap();
    let no_pixel = LossWeights { beta0: 2.0, beta1: 0.0 };
    let run = |grad| {
        let bundle = ModelBundle::toy(1, &mut seeded(6)).unwrap();
        let mut r = seeded(7);
        for t in bundle.coarse_params.values().chain(bundle.denoiser_params.values()) {
            let noise = uniform_vec(&mut r, t.numel(), 0.05);
            t.data_mut().iter_mut().zip(noise).for_each(|(v, n)| *v += n);
        }
        let terms = compute_losses(&bundle, &y, &gt, &ts, &eps, no_pixel, grad, Prediction::Residual).unwrap();
        terms.total.backward().unwrap();
        grad_norm(&bundle.coarse_params)
    };
    let (severed, attached) = (run(ResidualGrad::SEVERED), run(ResidualGrad::ATTACHED));
    outcome(
        severed == 0.0 && attached > 0.0,
        format!("|grad C| severed={severed:e} attached={attached:.3e}"),
    )
}

// 5

fn frequency_identity() -> Outcome {
    let mut rng = seeded(8);
    let mut exact = 0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(3..48), rng.random_range(3..48));
        let x = unit_image(&mut rng, w, h);
        let bands = decompose(x.pixels(), h, w).unwrap();
        if bands.recombine().iter().zip(x.pixels()).all(|(a, &b)| *a == b as f64) {
            exact += 1;
        }
    }
    let constant = Tensor::from_vec(&[1, 1, 9, 7], vec![0.37; 63]).unwrap();
    let flat = highpass(&constant).unwrap().to_vec().iter().all(|&v| v == 0.0)
        && decompose(&[0.37; 63], 9, 7).unwrap().high.iter().all(|&v| v == 0.0);
    outcome(exact == 100 && flat, format!("{exact}/100 bit-exact recombinations, constant highpass zero={flat}"))
}

// 6

struct Identity(NoiseSchedule);

impl Pipeline for Identity {
    fn schedule(&self) -> &NoiseSchedule {
        &self.0
    }
    fn coarse(&self, y: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(y.clone())
    }
    fn denoise(&self, x: &ImageBuffer, _: usize, _: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(ImageBuffer::filled(x.width(), x.height(), x.channels(), 0.0))
    }
}

fn tiling() -> Outcome {
    let pipe = Identity(NoiseSchedule::default_linear());
    let mut rng = seeded(9);
    let mut exact = true;
    for (w, h) in [(128, 128), (300, 300), (517, 331)] {
        let y = unit_image(&mut rng, w, h);
        exact &= enhance(&pipe, &y, 5, Mode::Native, 1).unwrap().pixels() == y.pixels();
    }
    let plan = TilePlan::native(300, 300).unwrap();
    let overhead = plan.overhead();
    outcome(
        exact && plan.len() == 9 && (overhead - 0.6384).abs() < 1e-9,
        format!("bit-exact={exact}, 300x300 plan {} tiles, overhead {:.2}%", plan.len(), overhead * 100.0),
    )
}

// 7, 8

const TRAIN_PAIRS: usize = 500;
const HELD_OUT: usize = 64;
const SIDE: usize = 32;

fn held_out() -> Vec<(ImageBuffer, ImageBuffer)> {
    (0..HELD_OUT)
        .map(|i| {
            let (y, gt, _) = generate_pair(CorpusKind::Blur, 0, (TRAIN_PAIRS + i) as u64, SIDE).unwrap();
            (y, gt)
        })
        .collect()
}

fn highpass_mse(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let diff = a.sub(b).unwrap();
    let bands = decompose(diff.pixels(), diff.height(), diff.width()).unwrap();
    bands.high.iter().map(|v| v * v).sum::<f64>() / bands.high.len() as f64
}

fn median(v: &[f32]) -> f32 {
    let mut v = v.to_vec();
    v.sort_by(f32::total_cmp);
    v[v.len() / 2]
}

fn train_toy() -> (Trainer, Vec<f32>, Duration) {
    let start = Instant::now();
    let corpus = Corpus::synthetic(CorpusKind::Blur, TRAIN_PAIRS, SIDE, 0).unwrap();
    let mut trainer = Trainer::toy(1, TrainConfig::default()).unwrap();
    let iters = trainer.config.iters as u64;
    let reports = trainer.run(&corpus, iters, |_, _| {}).unwrap();
    (trainer, reports.iter().map(|r| r.total).collect(), start.elapsed())
}

fn training_efficacy(trainer: &Trainer, took: Duration) -> Outcome {
    let pipe = Weights::ema(&trainer.bundle);
    let (mut p_in, mut p_out, mut hp_full, mut hp_cp) = (0.0, 0.0, 0.0, 0.0);
    for (i, (y, gt)) in held_out().iter().enumerate() {
        let out = enhance(&pipe, y, 5, Mode::Full, i as u64).unwrap();
        let cp = coarse_only(&pipe, y, Mode::Full).unwrap();
        p_in += psnr(y, gt).unwrap();
        p_out += psnr(&out, gt).unwrap();
        hp_full += highpass_mse(&out, gt);
        hp_cp += highpass_mse(&cp, gt);
    }
    let n = HELD_OUT as f64;
    let (p_in, p_out, hp_full, hp_cp) = (p_in / n, p_out / n, hp_full / n, hp_cp / n);
    outcome(
        p_out - p_in >= 3.0 && hp_full <= hp_cp && took <= Duration::from_secs(30 * 60),
        format!(
            "PSNR {p_in:.2} -> {p_out:.2} dB (+{:.2}), highpass MSE full {hp_full:.5} vs CP {hp_cp:.5}, trained in {:.0}s",
            p_out - p_in,
            took.as_secs_f64()
        ),
    )
}

fn loss_decreases(losses: &[f32]) -> Outcome {
    let (early, late) = (median(&losses[..=100]), median(&losses[900..=1000]));
    outcome(late < early, format!("median L_total over [0,100] {early:.5}, over [900,1000] {late:.5}"))
}

fn plug_and_play(trainer: &Trainer) -> Outcome {
    let pipe = Weights::ema(&trainer.bundle);
    let smooth = DegradationSpec::Blur(BlurKernel::Gaussian { size: 5, sigma: 1.5 });
    let mut better = 0;
    for (i, (_, gt)) in held_out().iter().enumerate() {
        let soft = degrade(gt, &smooth).unwrap();
        let refined = refine_external(&pipe, &soft, 5, Mode::Full, i as u64).unwrap();
        if highpass_mse(&refined, gt) < highpass_mse(&soft, gt) {
            better += 1;
        }
    }
    let share = better as f64 / HELD_OUT as f64;
    outcome(share >= 0.8, format!("{better}/{HELD_OUT} refinements reduce highpass MSE ({:.0}%)", share * 100.0))
}

// 9

fn stroke_pair() -> (BinaryImage, BinaryImage, BinaryImage) {
    let (w, h) = (12, 9);
    let mut gt = vec![false; w * h];
    let mut thin = vec![false; w * h];
    for y in 3..6 {
        for x in 1..11 {
            gt[y * w + x] = true;
            thin[y * w + x] = y != 5;
        }
    }
    let skel = zhang_suen(&gt, w, h);
    assert!(skel.iter().zip(&thin).all(|(&s, &t)| !s || t), "skeleton must lie in the thinner stroke");
    (
        BinaryImage::from_text_mask(w, h, &gt).unwrap(),
        BinaryImage::from_text_mask(w, h, &thin).unwrap(),
        BinaryImage::from_text_mask(w, h, &vec![false; w * h]).unwrap(),
    )
}

fn metrics_and_round_trips() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    let mut rng = seeded(10);
    let a = unit_image(&mut rng, 24, 20);
    let shifted = ImageBuffer::new(24, 20, 1, a.pixels().iter().map(|v| v * 0.5 + 16.0 / 255.0).collect()).unwrap();
    let base = ImageBuffer::new(24, 20, 1, a.pixels().iter().map(|v| v * 0.5).collect()).unwrap();
    check(psnr(&a, &a).unwrap() == 100.0, "psnr cap");
    check((psnr(&base, &shifted).unwrap() - 20.0 * (255.0f64 / 16.0).log10()).abs() < 1e-4, "psnr 16/255");
    check(psnr(&a, &base).unwrap() == psnr(&base, &a).unwrap(), "psnr symmetry");
    check((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12, "ssim identity");
    let inv = ImageBuffer::new(24, 20, 1, a.pixels().iter().map(|v| 1.0 - v).collect()).unwrap();
    check(ssim(&a, &inv).unwrap() < 0.5, "ssim inverted");
    let c = ImageBuffer::filled(24, 20, 1, 0.3);
    check((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12, "ssim constants");
    let bimodal = ImageBuffer::new(4, 1, 1, vec![0.2, 0.8, 0.2, 0.8]).unwrap();
    let t = otsu_threshold(&bimodal);
    check(t > 0.2 && t < 0.8, "otsu bimodal");
    check(otsu_threshold(&c) == 0.5 / 255.0, "otsu constant");

    let mut gt = vec![1u8; 200];
    let mut pred = vec![1u8; 200];
    for i in 0..100 {
        gt[i] = 0;
    }
    for i in 0..80 {
        pred[i] = 0;
    }
    for i in 100..120 {
        pred[i] = 0;
    }
    let (gt, pred) = (BinaryImage::new(20, 10, gt).unwrap(), BinaryImage::new(20, 10, pred).unwrap());
    let s = f_measure(&pred, &gt).unwrap();
    check((s.fm - 80.0).abs() < 1e-9 && (s.precision - 80.0).abs() < 1e-9, "FM 80");
    check(f_measure(&gt, &gt).unwrap().fm == 100.0, "FM identity");
    let (stroke, thinner, blank) = stroke_pair();
    check(f_measure(&blank, &stroke).unwrap().fm == 0.0, "FM blank");
    check(pseudo_f_measure(&thinner, &stroke).unwrap() == 100.0, "p-FM thinner stroke");
    check(f_measure(&thinner, &stroke).unwrap().fm < 100.0, "FM thinner stroke");
    check(pseudo_f_measure(&stroke, &stroke).unwrap() == 100.0, "p-FM identity");
    check(pseudo_f_measure(&blank, &stroke).unwrap() == 0.0, "p-FM blank");

    for channels in [1, 3] {
        let bytes: Vec<u8> = (0..17 * 11 * channels).map(|_| rng.random()).collect();
        let img = ImageBuffer::new(17, 11, channels, bytes.iter().map(|&b| b as f32 / 255.0).collect()).unwrap();
        let enc = encode(&img);
        check(encode(&decode(&enc, "mem").unwrap()) == enc, "pnm round trip");
    }

    let corpus = Corpus::synthetic(CorpusKind::Blur, 6, 32, 1).unwrap();
    let config = TrainConfig {
        batch: 2,
        ..TrainConfig::default()
    };
    let mut full = Trainer::toy(1, config).unwrap();
    full.run(&corpus, 2, |_, _| {}).unwrap();
    let saved = write_checkpoint(&full);
    let reloaded = read_checkpoint(&saved, "memory").unwrap();
    check(write_checkpoint(&reloaded) == saved, "checkpoint round trip");
    let mut resumed = reloaded;
    full.run(&corpus, 5, |_, _| {}).unwrap();
    resumed.run(&corpus, 5, |_, _| {}).unwrap();
    check(write_checkpoint(&full) == write_checkpoint(&resumed), "resume bit-identical");

    let detail = if failures.is_empty() {
        "metric examples, PNM/checkpoint round trips and resume all exact".to_string()
    } else {
        format!("failed: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

// 10

fn cli_twice(dir: &Path, tag: &str, args: &[String]) -> std::result::Result<Vec<u8>, String> {
    let mut outputs = Vec::new();
    for run in 0..2 {
        let sub = dir.join(format!("{tag}{run}"));
        fs::create_dir_all(&sub).unwrap();
        let args: Vec<String> = args.iter().map(|a| a.replace("{out}", sub.to_str().unwrap())).collect();
        let out = Command::new(env!("CARGO_BIN_EXE_docdiff"))
            .args(&args)
            .env_remove("DOCDIFF_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{tag}: {}", String::from_utf8_lossy(&out.stderr)));
        }
        let mut bytes = out.stdout;
        let mut files: Vec<_> = walk(&sub);
        files.sort();
        for f in files {
            bytes.extend(f.strip_prefix(&sub).unwrap().to_string_lossy().bytes());
            bytes.extend(fs::read(&f).unwrap());
        }
        outputs.push(bytes);
    }
    if outputs[0] == outputs[1] {
        Ok(outputs.remove(0))
    } else {
        Err(format!("{tag} differs between runs"))
    }
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let s = |v: &str| v.to_string();
    let corpus = t.join("corpus");
    let conf = t.join("tiny.conf");
    fs::write(&conf, "batch = 2\neval_every = 1\n").unwrap();
    let synth = |out: &Path| {
        vec![s("synth"), s("--out"), out.to_string_lossy().into_owned(), s("--count"), s("3"), s("--kind"), s("seal"), s("--size"), s("32"), s("--seed"), s("5")]
    };
    let mut steps: Vec<(&str, Vec<String>)> = vec![("synth", synth(Path::new("{out}")))];
    let setup = Command::new(env!("CARGO_BIN_EXE_docdiff")).args(synth(&corpus)).output().unwrap();
    if !setup.status.success() {
        return outcome(false, "corpus setup failed");
    }
    let ckpt = t.join("m.ckpt");
    let train_setup = Command::new(env!("CARGO_BIN_EXE_docdiff"))
        .args(["train", "--config", conf.to_str().unwrap(), "--data", corpus.to_str().unwrap(), "--out", ckpt.to_str().unwrap(), "--iters", "2"])
        .output()
        .unwrap();
    if !train_setup.status.success() {
        return outcome(false, "checkpoint setup failed");
    }
    let img = corpus.join("train/000000.ppm");
    let split = corpus.join("train");
    let p = |x: &Path| x.to_string_lossy().into_owned();
    steps.push(("train", vec![s("train"), s("--config"), p(&conf), s("--data"), p(&corpus), s("--out"), s("{out}/m.ckpt"), s("--iters"), s("2")]));
    steps.push(("enhance", vec![s("enhance"), s("--ckpt"), p(&ckpt), s("--in"), p(&img), s("--out"), s("{out}/e.ppm"), s("--steps"), s("5"), s("--seed"), s("3")]));
    steps.push(("eval", vec![s("eval"), s("--pred"), p(&split), s("--gt"), p(&split)]));
    steps.push(("schedule", vec![s("schedule"), s("--dump")]));
    let mut done = Vec::new();
    for (tag, args) in &steps {
        match cli_twice(t, tag, args) {
            Ok(_) => done.push(*tag),
            Err(e) => return outcome(false, e),
        }
    }
    outcome(true, format!("byte-identical reruns: {}", done.join(", ")))
}

fn main() {
    let s = Duration::from_secs;
    let mut results = vec![
        report("1", "schedule correctness", s(1), schedule_correctness),
        report("2", "oracle sampler exactness", s(5), oracle_sampler),
        report("3", "gradient fidelity", s(60), gradient_fidelity),
        report("4", "stop-gradient contract", s(10), stop_gradient),
        report("5", "frequency identity", s(5), frequency_identity),
        report("6", "tiling", s(5), tiling),
    ];
    let (trainer, losses, took) = train_toy();
    results.push(report("7", "toy training efficacy", s(30 * 60), || training_efficacy(&trainer, took)));
    results.push(report("7a", "loss decreases (trainer invariant)", s(1), || loss_decreases(&losses)));
    results.push(report("8", "plug-and-play refinement", s(10 * 60), || plug_and_play(&trainer)));
    results.push(report("9", "metrics and round trips", s(120), metrics_and_round_trips));
    results.push(report("10", "CLI determinism", s(300), cli_determinism));
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
