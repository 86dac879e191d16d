use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use longvit_core::attention::{multihead_dilated_attention, AttentionWeights, DilationSchedule};
use longvit_core::encoder::{
    encode, load_weights, save_weights, EncoderConfig, EncoderWeights, Mode,
};
use longvit_core::image::{encode_image, PatchGrid, PatchSequence, PipelineConfig};
use longvit_core::init::normal;
use longvit_core::par;
use longvit_core::tasks::synthetic::MarkerTask;
use longvit_core::tasks::{predict, train, FinetuneConfig, Target, TaskModel};

#[test]
fn vit_s_parameter_count_follows_from_shapes() {
    let cfg = EncoderConfig::paper();
    let (d, f, p) = (cfg.hidden, cfg.ffn, cfg.patch_len());
    let per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * 2 * d;
    let expected = cfg.layers * per_layer + (p * d + d) + 32 * 32 * d + 2 * d;
    let w = EncoderWeights::zeros(&cfg).unwrap();
    assert_eq!(w.parameter_count(), expected);
    let ratio = expected as f64 / 21.9e6;
    assert!((0.95..=1.05).contains(&ratio), "{expected} parameters");
}

#[test]
fn dense_schedule_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 40;
    let w = AttentionWeights::random_with_bias(16, 4, 0.3, &mut rng).unwrap();
    let x = normal(&[n, 16], 1.0, &mut rng);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let sched = DilationSchedule::dense(n);
    let out = multihead_dilated_attention(&x, &w, &sched).unwrap();
    let out_perm = multihead_dilated_attention(&x.gather_rows(&perm), &w, &sched).unwrap();
    assert!(out.gather_rows(&perm).max_abs_diff(&out_perm) < 1e-12);
}

#[test]
fn dilated_schedule_is_not_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 64;
    let w = AttentionWeights::random_with_bias(16, 4, 0.3, &mut rng).unwrap();
    let x = normal(&[n, 16], 1.0, &mut rng);
    let perm: Vec<usize> = (0..n).rev().collect();
    let sched = DilationSchedule::new(vec![(8, 1), (32, 4)]).unwrap();
    let out = multihead_dilated_attention(&x, &w, &sched).unwrap();
    let out_perm = multihead_dilated_attention(&x.gather_rows(&perm), &w, &sched).unwrap();
    assert!(out.gather_rows(&perm).max_abs_diff(&out_perm) > 1e-6);
}

fn tiny_sequence(weights: &EncoderWeights, resolution: usize) -> PatchSequence {
    let task = MarkerTask {
        resolution,
        marker: 1,
        ..MarkerTask::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("markers.ppm");
    task.image(0, 1, &mut ChaCha8Rng::seed_from_u64(3))
        .write_pnm(&path)
        .unwrap();
    let pipeline = PipelineConfig::new(resolution, 32).unwrap();
    encode_image(&path, &pipeline, &weights.embedder, &weights.pos).unwrap()
}

#[test]
fn encoding_is_deterministic_across_thread_counts() {
    let cfg = EncoderConfig::tiny();
    let weights = EncoderWeights::seeded(&cfg, 4).unwrap();
    let seq = tiny_sequence(&weights, 256);
    assert_eq!(seq.grid, PatchGrid::new(256, 256, 32).unwrap());
    let run = |threads| {
        par::with_threads(threads, || {
            encode(&seq, &cfg, &weights, &cfg.schedule, &mut Mode::Eval)
        })
    };
    let (_, a) = run(1).unwrap();
    let (_, b) = run(1).unwrap();
    let (_, c) = run(3).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(a.data(), c.data());
    assert_eq!(a.shape(), &[cfg.hidden][..]);
}

#[test]
fn weights_round_trip_through_a_checkpoint() {
    let cfg = EncoderConfig::tiny();
    let weights = EncoderWeights::seeded(&cfg, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.lvt");
    save_weights(&path, &weights).unwrap();
    let back = load_weights(&path, &cfg).unwrap();
    assert_eq!(back, weights);
    let mut other = cfg.clone();
    other.hidden = 64;
    assert!(load_weights(&path, &other).is_err());
}

#[test]
fn eval_predictions_ignore_drop_path() {
    let mut cfg = EncoderConfig::tiny();
    cfg.drop_path = 0.5;
    let weights = EncoderWeights::seeded(&cfg, 6).unwrap();
    let model = TaskModel::new(cfg.clone(), weights, 2);
    let task = MarkerTask {
        resolution: 128,
        marker: 1,
        ..MarkerTask::default()
    };
    let data = task.dataset(2, 7).unwrap();
    let a = predict(&model, &data.samples[0], &cfg.schedule).unwrap();
    let b = predict(&model, &data.samples[0], &cfg.schedule).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
}

#[test]
fn dropped_branches_still_train() {
    let mut cfg = EncoderConfig::tiny();
    cfg.drop_path = 0.9;
    let weights = EncoderWeights::seeded(&cfg, 8).unwrap();
    let mut model = TaskModel::new(cfg.clone(), weights, 2);
    let task = MarkerTask {
        resolution: 128,
        marker: 1,
        ..MarkerTask::default()
    };
    let data = task.dataset(6, 9).unwrap();
    let items: Vec<(usize, Target)> = (0..data.samples.len())
        .map(|i| (i, Target::Class(i % 2)))
        .collect();
    let mut ft = FinetuneConfig::new(cfg.schedule.clone());
    ft.epochs = 2;
    ft.batch_size = 1;
    let losses = train(&mut model, &data.samples, &items, &ft, 3).unwrap();
    assert!(losses.iter().all(|l| l.is_finite()));
}
