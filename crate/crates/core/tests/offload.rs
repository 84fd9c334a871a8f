//! Tiered engine: schedule equivalence, oracle equivalence, buffer safety and
//! memory accounting.

mod common;

use std::collections::HashMap;

use common::{engine, run_engine, train_scene, views};
use gsscale::math::identity;
use gsscale::offload::{setup_tiers, Engine, EngineConfig, Schedule, SlotEvent, View, MIN_CHUNK_BYTES};
use gsscale::optim::Hyperparams;
use gsscale::real::max_rel_err;
use gsscale::render::{Image, RenderConfig};
use gsscale::scene::Camera;
use gsscale::train::DenseTrainer;
use proptest::prelude::*;

fn config(schedule: Schedule) -> EngineConfig {
    EngineConfig {
        schedule,
        ..EngineConfig::default()
    }
}

#[test]
fn serial_and_pipelined_schedules_agree_bitwise() {
    let s = train_scene::<f32>(1, 600, 12, 32);
    let v = views(&s.cameras);
    let mut serial = engine(&s.init, config(Schedule::Serial));
    let mut piped = engine(&s.init, config(Schedule::Pipelined));
    let a = run_engine(&mut serial, &v, &s.images, 40);
    let b = run_engine(&mut piped, &v, &s.images, 40);
    assert_eq!(a, b);
    assert_eq!(serial.snapshot().unwrap(), piped.snapshot().unwrap());
    assert_eq!(serial.access().1, piped.access().1);
}

#[test]
fn max_zero_offload_matches_the_dense_oracle_bitwise() {
    let s = train_scene::<f64>(2, 400, 10, 32);
    let v = views(&s.cameras);
    let cfg = EngineConfig {
        host_max: 0,
        verify: true,
        ..config(Schedule::Pipelined)
    };
    let mut e = engine(&s.init, cfg);
    let mut dense = DenseTrainer::new(&s.init, Hyperparams::default(), RenderConfig::default());
    for k in 0..25 {
        let i = (k * 3) % v.len();
        let next = &v[(i + 3) % v.len()];
        let a = e.run_iteration(&v[i], &s.images[i], Some(next)).unwrap();
        let b = dense.step(&v[i], &s.images[i]);
        assert_eq!(a.loss.to_bits(), b.loss.to_bits(), "iteration {k}");
        assert_eq!(a.ids, b.ids);
    }
    assert_eq!(e.snapshot().unwrap(), dense.snapshot());
}

/// Largest relative loss deviation of deferred offload from the dense oracle.
fn oracle_deviation(eps: f64) -> f64 {
    let s = train_scene::<f64>(3, 500, 12, 32);
    let v = views(&s.cameras);
    let hp = Hyperparams {
        eps,
        ..Hyperparams::default()
    };
    let cfg = EngineConfig {
        verify: true,
        ..config(Schedule::Pipelined)
    };
    let store = setup_tiers(&s.init, cfg.host_max, cfg.device_max);
    let mut e = Engine::new(store, hp.clone(), RenderConfig::default(), cfg).unwrap();
    let mut dense = DenseTrainer::new(&s.init, hp, RenderConfig::default());
    let offload = run_engine(&mut e, &v, &s.images, 60);
    let oracle: Vec<f64> = (0..60)
        .map(|k| {
            let i = (k * 7) % v.len();
            dense.step(&v[i], &s.images[i]).loss
        })
        .collect();
    max_rel_err(&offload, &oracle, 1e-12)
}

#[test]
fn deferred_offload_tracks_the_dense_oracle() {
    // Skipped steps drop eps, so the gap closes as eps shrinks against sqrt(v).
    let tiny = oracle_deviation(1e-15);
    assert!(tiny < 1e-5, "loss deviation {tiny}");
    let default = oracle_deviation(1e-8);
    assert!(default < 0.2 && default > tiny, "loss deviation {default}");
}

#[test]
fn multi_chunk_forwarding_is_coherent() {
    // Enough visible rows that 1 MiB chunks split the forwarded set.
    let cfg = gsscale::scene::SynthConfig {
        seed: 4,
        gaussians: 12_000,
        cameras: 4,
        width: 16,
        height: 16,
        ..Default::default()
    }
    .with_coverage(0.6);
    let s = gsscale::scene::synth_scene_with::<f32>(&cfg);
    let v = views(&s.cameras);
    let visible = gsscale::render::frustum_cull(&s.init.geometric, &s.cameras[0], 3.0, 0.3).len();
    assert!(visible * 49 * 4 > MIN_CHUNK_BYTES, "only {visible} visible");
    let small = EngineConfig {
        chunk_bytes: MIN_CHUNK_BYTES,
        verify: true,
        ..config(Schedule::Pipelined)
    };
    let mut a = engine(&s.init, small);
    let mut b = engine(&s.init, config(Schedule::Serial));
    assert_eq!(run_engine(&mut a, &v, &s.images, 4), run_engine(&mut b, &v, &s.images, 4));
}

#[test]
fn empty_view_still_advances_counters() {
    let s = train_scene::<f32>(5, 200, 4, 16);
    let mut e = engine(&s.init, config(Schedule::Serial));
    // Looks straight up, away from the ground slab.
    let away = Camera::new(identity(), [0.0, 0.0, 10.0], 16.0, 16.0, 8.0, 8.0, 16, 16, 0.01, 5.0).unwrap();
    let view = View {
        index: 0,
        cams: vec![away],
    };
    let black = Image::new(16, 16);
    for _ in 0..3 {
        let r = e.run_iteration(&view, &black, None).unwrap();
        assert!(r.ids.is_empty());
        assert_eq!(r.loss, 0.0);
    }
    e.drain().unwrap();
    let store = e.store().unwrap();
    // Three lazy updates, the last one applied by the drain.
    assert!(store.host.counters.iter().all(|&c| c == 3));
    assert_eq!(store.host.params, s.init.appearance);
}

#[test]
fn device_holds_ten_of_fifty_nine_parameters() {
    let s = train_scene::<f32>(6, 1000, 2, 8);
    let store = setup_tiers(&s.init, 15, 0);
    assert_eq!(store.device.params.len(), 10_000);
    assert_eq!(store.host.params.len(), 49_000);
    assert_eq!(store.device_param_share(), 10.0 / 59.0);
}

#[test]
fn offload_peak_is_a_fraction_of_the_dense_peak() {
    let cfg = gsscale::scene::SynthConfig {
        gaussians: 6000,
        cameras: 8,
        width: 32,
        height: 32,
        ..Default::default()
    }
    .with_coverage(0.08);
    let s = gsscale::scene::synth_scene_with::<f32>(&cfg);
    let v = views(&s.cameras);
    let mut e = engine(&s.init, config(Schedule::Pipelined));
    let mut dense = DenseTrainer::new(&s.init, Hyperparams::default(), RenderConfig::default());
    run_engine(&mut e, &v, &s.images, 8);
    for i in 0..8 {
        dense.step(&v[(i * 7) % 8], &s.images[(i * 7) % 8]);
    }
    let d = dense.memory();
    assert_eq!(d.peak_model, 59 * 6000 * 4 * 4);
    let ratio = d.peak_model as f64 / e.memory().peak_model as f64;
    assert!(ratio >= 3.0, "dense/offload {ratio}");
    let m = e.memory();
    assert!(m.peak_total >= m.last.total());
    assert_eq!(m.at_peak.total(), m.peak_total);
}

/// Checks the double-buffer protocol on an ordered slot log: a buffer is
/// written only when it is free, read only while it holds the gradients
/// written last, and released once per write.
fn check_protocol(log: &[(u8, u64, SlotEvent)]) -> Result<(), String> {
    #[derive(PartialEq)]
    enum State {
        Free,
        Written(u64),
    }
    let mut state: HashMap<u8, State> = HashMap::new();
    let mut readers: HashMap<u8, i32> = HashMap::new();
    for (k, &(slot, it, ev)) in log.iter().enumerate() {
        let s = state.entry(slot).or_insert(State::Free);
        let r = readers.entry(slot).or_insert(0);
        match ev {
            SlotEvent::Write => {
                if *s != State::Free || *r != 0 {
                    return Err(format!("event {k}: buffer {slot} overwritten while in use"));
                }
                *s = State::Written(it);
            }
            SlotEvent::ReadStart | SlotEvent::ReadEnd => {
                if *s != State::Written(it) {
                    return Err(format!("event {k}: buffer {slot} read for iteration {it} it does not hold"));
                }
                *r += if ev == SlotEvent::ReadStart { 1 } else { -1 };
                if *r < 0 {
                    return Err(format!("event {k}: unmatched read end"));
                }
            }
            SlotEvent::Release => {
                if *s != State::Written(it) || *r != 0 {
                    return Err(format!("event {k}: buffer {slot} released while in use"));
                }
                *s = State::Free;
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn staging_buffers_are_never_overwritten_under_random_delays(jitter_seed in any::<u64>(), jitter_us in 1u64..400) {
        let s = train_scene::<f32>(7, 150, 6, 16);
        let v = views(&s.cameras);
        let cfg = EngineConfig {
            jitter_us,
            jitter_seed,
            ..config(Schedule::Pipelined)
        };
        let mut e = engine(&s.init, cfg);
        let losses = run_engine(&mut e, &v, &s.images, 12);
        e.drain().unwrap();
        let log = e.slot_log();
        prop_assert_eq!(log.iter().filter(|x| x.2 == SlotEvent::Write).count(), 12);
        prop_assert_eq!(log.iter().filter(|x| x.2 == SlotEvent::Release).count(), 12);
        if let Err(msg) = check_protocol(&log) {
            return Err(TestCaseError::fail(msg));
        }
        let mut serial = engine(&s.init, config(Schedule::Serial));
        prop_assert_eq!(losses, run_engine(&mut serial, &v, &s.images, 12));
    }
}

#[test]
fn protocol_checker_rejects_an_overwrite() {
    let log = [(0, 0, SlotEvent::Write), (0, 0, SlotEvent::ReadStart), (0, 1, SlotEvent::Write)];
    assert!(check_protocol(&log).is_err());
}
