use momentguide::schedule::{make_schedule, ScheduleKind};
use momentguide::score::{train_denoiser, Activation, TinyDenoiser, TrainConfig};
use momentguide::{Image, NoiseRng};

#[test]
fn single_image_training_halves_validation_loss() {
    let img = Image::from_fn(4, 4, |i, j| ((i * 4 + j) as f64 / 15.0) - 0.5);
    let sched = make_schedule(ScheduleKind::Linear, 100, 1e-3, 0.2).unwrap();
    let mut rng = NoiseRng::new(31);
    let init = TinyDenoiser::init(4, 4, (32, 32), Activation::Tanh, &mut rng).unwrap();
    let cfg = TrainConfig {
        steps: 2000,
        ..TrainConfig::default()
    };
    let (_, report) = train_denoiser(&init, &[img], &sched, &cfg, &mut rng).unwrap();
    assert_eq!(report.losses.len(), 2000);
    assert!(
        report.final_validation < 0.5 * report.initial_validation,
        "{} -> {}",
        report.initial_validation,
        report.final_validation
    );
}
