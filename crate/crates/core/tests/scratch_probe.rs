use campsim::body::{Decoder, DecoderConfig};
use campsim::env::{Env, EnvConfig, Stage};
use campsim::metrics::success_rate;
use campsim::nn::Params;
use campsim::policy::{Policy, PolicyConfig};
use campsim::rng::stream;
use campsim::scenarios::{empty_scene, UniformFreeSpace};
use campsim::sensing::SensingConfig;
use campsim::traj::{rollout_episode, ActionMode};
use campsim::trainer::{Checkpoint, StartGoalSampler};
use std::path::Path;
use std::sync::Arc;

#[test]
fn probe_eval() {
    let ck_path =
        std::env::var("CK_PATH").unwrap_or_else(|_| "/tmp/bench44/stage1_best.json".into());
    let ck = Checkpoint::load(Path::new(&ck_path)).unwrap();
    let mut params = Params::new();
    let pol = Policy::new(&mut params, PolicyConfig::default()).unwrap();
    ck.restore_into(&mut params).unwrap();
    let dec = Arc::new(Decoder::new(DecoderConfig::default()).unwrap());
    let scene = Arc::new(empty_scene(5.0));
    let sampler = UniformFreeSpace::default();
    let mut trajs = Vec::new();
    for ep in 0..100u64 {
        let mut env = Env::new(
            Arc::clone(&scene),
            Arc::clone(&dec),
            SensingConfig::default(),
            EnvConfig::default(),
            Stage::Pretrain,
        )
        .unwrap();
        let mut rng = stream(11, "accept-eval-pair", ep, 0);
        let (start, goal) = loop {
            let (s, g) = sampler.sample(&mut rng, &scene);
            if env.reset(s, g).is_ok() {
                break (s, g);
            }
        };
        let t = rollout_episode(
            &mut env,
            &pol,
            &params,
            11,
            start,
            goal,
            ActionMode::Mean,
            ("probe-eval".into(), ep, 0),
        )
        .unwrap();
        trajs.push(t);
    }
    let mut ds: Vec<f64> = trajs.iter().map(|t| t.final_distance()).collect();
    ds.sort_by(f64::total_cmp);
    println!(
        "SR(0.3) = {:.1}%  d: min {:.3} p25 {:.3} med {:.3} p75 {:.3} p90 {:.3} max {:.3}",
        success_rate(&trajs).unwrap(),
        ds[0],
        ds[24],
        ds[49],
        ds[74],
        ds[89],
        ds[99]
    );
}
