//! Writes the checked-in corpus seeds under `corpus/<target>/`.
//!
//! cargo run --example make_seeds

use std::fs;
use std::path::Path;

use crl_core::adam::AdamState;
use crl_core::algorithms::AlgoKind;
use crl_core::checkpoint::{encode_adam, encode_params};
use crl_core::mlp::{MlpLayout, MlpParams};
use crl_core::replay::{compute_nstep, Episode, ReplayBuffer};
use crl_core::wire::{
    encode_message, Hello, HubStats, Message, NodeRole, PushEpisode, SampleRequest, SourceStats, WeightsSnapshot,
};
use rand::SeedableRng;

fn write(target: &str, name: &str, bytes: &[u8]) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(target);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn episode(tag: u64, steps: usize) -> Episode {
    let mut e = Episode::new(tag, &[1.0, 0.0, 0.5], 1);
    for t in 0..steps {
        let x = t as f32 * 0.1;
        e.push(&[x.sin()], -(x as f64), &[x.cos(), x.sin(), x]).unwrap();
    }
    e
}

fn messages() -> Vec<(&'static str, Message)> {
    let mut rng = seeded_rng();
    let actor = MlpParams::init(MlpLayout::new(vec![3, 4, 1], true), Some(3e-3), &mut rng).unwrap();
    let transitions = compute_nstep(&episode(7, 6), 3, 0.99).unwrap();
    vec![
        ("hello", Message::Hello(Hello { role: NodeRole::Sampler, node_id: 3, publisher: false })),
        (
            "push",
            Message::PushEpisode(PushEpisode {
                source_id: 3,
                eval: false,
                weight_version: 2,
                episode_return: -1.5,
                episode: episode(1, 5),
            }),
        ),
        ("weights_request", Message::WeightsRequest { have_version: 4 }),
        ("weights", Message::Weights(WeightsSnapshot::from_params(5, AlgoKind::Td3, &[("actor", &actor)]))),
        ("sample_request", Message::SampleRequest(SampleRequest { batch_size: 32, n_step: 3, gamma: 0.99 })),
        ("sample_batch", Message::SampleBatch(transitions)),
        ("stats_request", Message::StatsRequest),
        (
            "stats",
            Message::Stats(HubStats {
                size: 10,
                capacity: 100,
                pushed_transitions: 10,
                pushed_episodes: 2,
                sampled_transitions: 64,
                weight_version: 1,
                protocol_errors: 0,
                sources: vec![SourceStats {
                    source_id: 3,
                    eval: false,
                    episodes: 2,
                    transitions: 10,
                    return_sum: -3.0,
                    last_return: -1.5,
                }],
            }),
        ),
        ("error", Message::error(3, "not ready")),
    ]
}

fn seeded_rng() -> rand::rngs::StdRng {
    rand::rngs::StdRng::seed_from_u64(0)
}

fn main() {
    let msgs = messages();
    let mut stream = Vec::new();
    for (name, msg) in &msgs {
        let bytes = encode_message(msg);
        write("decode_message", name, &bytes);
        stream.extend_from_slice(&bytes);
    }
    for chunk in [1u8, 7, 64] {
        let mut seed = vec![chunk];
        seed.extend_from_slice(&stream);
        write("frame_decoder", &format!("stream_{chunk}"), &seed);
    }

    let mut rng = seeded_rng();
    let critic = MlpParams::init(MlpLayout::new(vec![3, 8, 6, 1], true).with_action_input(1, 1), None, &mut rng).unwrap();
    write("decode_params", "critic", &encode_params(&critic));
    let actor = MlpParams::init(MlpLayout::new(vec![3, 4, 2], false), Some(3e-3), &mut rng).unwrap();
    write("decode_params", "actor", &encode_params(&actor));
    let mut adam = AdamState::new(critic.len(), 1e-4);
    let mut p = critic.as_slice().to_vec();
    let grads = vec![0.1; p.len()];
    adam.step(&mut p, &grads).unwrap();
    write("decode_adam", "stepped", &encode_adam(&adam));
    write("decode_adam", "fresh", &encode_adam(&AdamState::new(4, 1e-3)));

    let mut buf = ReplayBuffer::new(64).unwrap();
    buf.push(compute_nstep(&episode(1, 12), 1, 0.99).unwrap()).unwrap();
    buf.push(compute_nstep(&episode(2, 9), 5, 0.9).unwrap()).unwrap();
    let dir = tempfile_dir();
    let path = dir.join("replay.crlr");
    buf.save(&path).unwrap();
    write("replay_file", "two_episodes", &fs::read(&path).unwrap());
    fs::remove_dir_all(&dir).unwrap();

    write("config", "shorthand", b"env: pendulum\nalgorithm: td3\n");
    write(
        "config",
        "full",
        b"env: {name: reacher2, seed: 4}\n\
          algorithm:\n  kind: sac\n  gamma: 0.98\n  batch_size: 64\n  distribution: {kind: quantile, n_atoms: 51}\n  sac: {reward_scale: 10}\n\
          network: {hidden: [64, 64], layer_norm: false}\n\
          replay: {capacity: 100000, warm_up: 1000, n_step: 5}\n\
          distributed: {samplers: 2, hub: '127.0.0.1:7070', publish_period: 50}\n\
          run: {max_episodes: 10, checkpoint_period: 5}\n",
    );
    write("config", "categorical", b"env: mountaincar_c\nalgorithm: {kind: ddpg, distribution: categorical}\n");
    write("config", "bad_gamma", b"env: pendulum\nalgorithm: {kind: td3, gamma: 1.5}\n");

    write(
        "manifest",
        "checkpoint",
        b"agent.algorithm = td3\nagent.update_count = 4600\nagent.rng.seed = 00ff\nagent.rng.stream = 0\nagent.rng.word_pos = 1234\nrun.episodes = 25\n",
    );
    write("manifest", "comments", b"# header\n\nkey = value = more\n");

    write("scores_csv", "table", b"config,env,score\nA,e1,0\nB,e1,10\nA,e2,10\nB,e2,0\n");
    write("scores_csv", "tie", b"config,env,score\nA,flat,7\nB,flat,7\n");
    println!("seeds written to {}", Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").display());
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("crl-seeds-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}
