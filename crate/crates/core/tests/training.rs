use irsad::channel::sample_channels;
use irsad::covstats::ExpertKind;
use irsad::data::{generate_dataset, Dataset, DatasetSpec, Deployment, Frame, MixPolicy};
use irsad::rng;
use irsad::scenario::{ActivityVector, ScenarioConfig};
use irsad::signal::received_signal;
use irsad::unfolding::{train_unfolded, unfolded_forward, ExpertSource, TrainConfig};
use num_complex::Complex64;

fn desk_training_set(samples: usize, seed: u64) -> Dataset {
    let spec = DatasetSpec { samples, frames_per_deployment: 1, mix: MixPolicy::Fixed, seed };
    generate_dataset(&ScenarioConfig::desk_scale(), &spec).unwrap()
}

#[test]
fn desk_scale_training_reduces_loss() {
    let data = desk_training_set(2000, 21);
    let cfg = TrainConfig::default();
    let (params, report) = train_unfolded(&data, 4, &cfg, &ExpertSource::Fixed(ExpertKind::PerfectGrouping)).unwrap();
    let ratio = report.final_loss() / report.initial_loss;
    eprintln!("initial {} final {} ratio {ratio} stages {:?}", report.initial_loss, report.final_loss(), report.stage_losses);
    assert_eq!(params.depth(), 4);
    assert_eq!(report.stage_losses.len(), 4);
    assert_eq!(report.trace.len(), 4 * cfg.epochs_per_stage);
    for w in report.stage_losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{:?}", report.stage_losses);
    }
    assert!(params.layers.iter().all(|l| l.eta() > 0.0));
    assert!(ratio < 0.3, "final / initial = {ratio}");
}

#[test]
fn reseeded_training_is_bitwise_reproducible() {
    let data = desk_training_set(200, 5);
    let cfg = TrainConfig { dataset_size: 200, epochs_per_stage: 2, seed: 9, ..TrainConfig::default() };
    let run = || {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        pool.install(|| train_unfolded(&data, 2, &cfg, &ExpertSource::Fixed(ExpertKind::Expert3)).unwrap())
    };
    let (p1, r1) = run();
    let (p2, r2) = run();
    assert_eq!(r1.trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), r2.trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(p1, p2);
}

/// Noise-free frames with exactly one active device.
fn single_active_frames(dep: &Deployment, count: usize, seed: u64) -> Vec<Frame> {
    let k = dep.config().devices;
    (0..count)
        .map(|i| {
            let mut r = rng::trial(seed, i as u64);
            let active = i % k;
            let b: Vec<bool> = (0..k).map(|j| j == active).collect();
            let act = ActivityVector::from_indicators(&dep.scenario, b.clone());
            let ch = sample_channels(&dep.scenario, &dep.los, &dep.theta, &mut r).unwrap();
            let y = received_signal(&dep.scenario, &ch, &act, &dep.model(ExpertKind::Expert3).s).unwrap();
            let inv = 1.0 / dep.unit;
            Frame { y: y * Complex64::new(inv, 0.0), a: act.a.iter().map(|x| x * inv).collect(), b }
        })
        .collect()
}

#[test]
fn single_active_toy_ranks_the_true_device_first() {
    let cfg = ScenarioConfig {
        antennas: 4,
        irs_elements: 16,
        devices: 6,
        signature_len: 4,
        group_proportions: [0.0, 0.0, 1.0],
        ..ScenarioConfig::desk_scale()
    }
    .with_seed(3);
    let dep = Deployment::new(&cfg).unwrap();
    let train = single_active_frames(&dep, 300, 1);
    let test = single_active_frames(&dep, 60, 2);
    let data = Dataset { deployments: vec![dep], frames: train.into_iter().map(|f| (0, f)).collect() };
    let tcfg = TrainConfig { dataset_size: 300, batch_size: 30, epochs_per_stage: 4, ..TrainConfig::default() };
    let (params, report) = train_unfolded(&data, 2, &tcfg, &ExpertSource::Fixed(ExpertKind::Expert3)).unwrap();
    let dep = &data.deployments[0];
    let mut hits = 0;
    for f in &test {
        let a_hat = unfolded_forward(&f.y, &params, dep.model(ExpertKind::Expert3)).unwrap();
        let best = (0..a_hat.len()).fold(0, |b, j| if a_hat[j] > a_hat[b] { j } else { b });
        let truth = f.b.iter().position(|&x| x).unwrap();
        hits += (best == truth && a_hat[best] > 0.0) as usize;
    }
    eprintln!("toy ranking {hits}/{} loss {} -> {}", test.len(), report.initial_loss, report.final_loss());
    assert_eq!(hits, test.len());
}

