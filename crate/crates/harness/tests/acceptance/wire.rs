//! Criterion 9: wire codec round trips, truncation and stream reassembly.

use crl_core::algorithms::AlgoKind;
use crl_core::mlp::MlpLayout;
use crl_core::replay::{Episode, Transition};
use crl_core::wire::{
    decode_message, encode_message, FrameDecoder, Hello, HubStats, Message, NetworkBlob, NodeRole,
    PushEpisode, SampleRequest, SourceStats, WeightsSnapshot,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::Outcome;
use crate::ensure;

/// Arbitrary bit patterns, NaNs and infinities included.
fn any_f64(rng: &mut ChaCha8Rng) -> f64 {
    f64::from_bits(rng.random())
}

fn any_f32s(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| f32::from_bits(rng.random())).collect()
}

fn any_string(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(0..24);
    (0..len).map(|_| rng.random::<char>()).collect()
}

fn episode(rng: &mut ChaCha8Rng) -> Episode {
    let (obs, act, steps) = (rng.random_range(0..5), rng.random_range(0..3), rng.random_range(0..20));
    Episode {
        tag: rng.random(),
        obs_dim: obs,
        act_dim: act,
        states: any_f32s(rng, (steps + 1) * obs),
        actions: any_f32s(rng, steps * act),
        rewards: (0..steps).map(|_| any_f64(rng)).collect(),
        terminal: rng.random(),
    }
}

fn transition(rng: &mut ChaCha8Rng) -> Transition {
    let (obs, act) = (rng.random_range(0..5), rng.random_range(0..3));
    Transition {
        episode_tag: rng.random(),
        step: rng.random(),
        state: any_f32s(rng, obs),
        action: any_f32s(rng, act),
        n_step_reward: any_f64(rng),
        next_state: any_f32s(rng, obs),
        discount_pow: any_f64(rng),
        done: rng.random(),
    }
}

fn layout(rng: &mut ChaCha8Rng) -> MlpLayout {
    let depth = rng.random_range(2..5);
    let sizes: Vec<usize> = (0..depth).map(|_| rng.random_range(1..6)).collect();
    let layout = MlpLayout::new(sizes, rng.random());
    if depth > 2 && rng.random_bool(0.5) {
        let at = rng.random_range(1..depth - 1);
        layout.with_action_input(at, rng.random_range(1..3))
    } else {
        layout
    }
}

pub fn random_message(rng: &mut ChaCha8Rng, kind: usize) -> Message {
    match kind % 9 {
        0 => Message::Hello(Hello {
            role: [NodeRole::Sampler, NodeRole::Trainer, NodeRole::Hub][rng.random_range(0..3)],
            node_id: rng.random(),
            publisher: rng.random(),
        }),
        1 => Message::PushEpisode(PushEpisode {
            source_id: rng.random(),
            eval: rng.random(),
            weight_version: rng.random(),
            episode_return: any_f64(rng),
            episode: episode(rng),
        }),
        2 => Message::WeightsRequest { have_version: rng.random() },
        3 => Message::Weights(WeightsSnapshot {
            version: rng.random(),
            algo: [AlgoKind::Ddpg, AlgoKind::Td3, AlgoKind::Sac][rng.random_range(0..3)],
            networks: (0..rng.random_range(0..4))
                .map(|_| {
                    let layout = layout(rng);
                    let params = any_f32s(rng, layout.param_count());
                    NetworkBlob { role: any_string(rng), layout, params }
                })
                .collect(),
        }),
        4 => Message::SampleRequest(SampleRequest {
            batch_size: rng.random(),
            n_step: rng.random(),
            gamma: any_f64(rng),
        }),
        5 => Message::SampleBatch((0..rng.random_range(0..6)).map(|_| transition(rng)).collect()),
        6 => Message::StatsRequest,
        7 => Message::Stats(HubStats {
            size: rng.random(),
            capacity: rng.random(),
            pushed_transitions: rng.random(),
            pushed_episodes: rng.random(),
            sampled_transitions: rng.random(),
            weight_version: rng.random(),
            protocol_errors: rng.random(),
            sources: (0..rng.random_range(0..4))
                .map(|_| SourceStats {
                    source_id: rng.random(),
                    eval: rng.random(),
                    episodes: rng.random(),
                    transitions: rng.random(),
                    return_sum: any_f64(rng),
                    last_return: any_f64(rng),
                })
                .collect(),
        }),
        _ => Message::Error { code: rng.random(), message: any_string(rng) },
    }
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    let mut frames = Vec::new();
    let mut prefixes = 0usize;
    for i in 0..10_000 {
        let msg = random_message(&mut rng, i);
        let bytes = encode_message(&msg);
        let back = decode_message(&bytes).map_err(|e| format!("message {i} ({:?}): {e}", msg.msg_type()))?;
        // NaN payloads defeat `==`, so compare the re-encoding instead.
        ensure!(encode_message(&back) == bytes, "message {i} ({:?}) did not round trip", msg.msg_type());
        ensure!(back.msg_type() == msg.msg_type(), "message {i} changed type");
        // Every proper prefix is rejected; long frames are probed at a sample of cuts.
        let cuts: Vec<usize> = if bytes.len() <= 64 {
            (0..bytes.len()).collect()
        } else {
            (0..64).map(|_| rng.random_range(0..bytes.len())).collect()
        };
        for cut in cuts {
            ensure!(decode_message(&bytes[..cut]).is_err(), "message {i}: {cut}-byte prefix decoded");
            let mut dec = FrameDecoder::new();
            dec.feed(&bytes[..cut]);
            ensure!(
                matches!(dec.next_message(), Ok(None)),
                "message {i}: frame decoder produced output from a {cut}-byte prefix"
            );
            prefixes += 1;
        }
        frames.push(bytes);
    }

    // Concatenate everything and feed it back in random slices.
    let stream: Vec<u8> = frames.concat();
    let mut dec = FrameDecoder::new();
    let mut out = Vec::with_capacity(frames.len());
    let mut pos = 0;
    while pos < stream.len() {
        let take = rng.random_range(1..=4096).min(stream.len() - pos);
        dec.feed(&stream[pos..pos + take]);
        pos += take;
        while let Some(m) = dec.next_message().map_err(|e| format!("stream decode: {e}"))? {
            out.push(encode_message(&m));
        }
    }
    ensure!(dec.pending() == 0, "{} bytes left in the decoder", dec.pending());
    ensure!(out == frames, "reassembled stream differs ({} of {} frames)", out.len(), frames.len());
    Ok(format!(
        "10000 messages round trip bit-exactly, {prefixes} truncated prefixes rejected, {} stream bytes reassembled",
        stream.len()
    ))
}
