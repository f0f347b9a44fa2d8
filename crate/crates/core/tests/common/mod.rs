#![allow(dead_code)]

use std::fs;
use std::path::Path;

use nvbench::event_io::gesture::write_aedat;
use nvbench::event_io::nmnist::encode_nmnist;
use nvbench::event_io::Event;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// N-MNIST-style raw tree: each digit is a short horizontal stroke at a class-specific row,
/// jittered and sprinkled with noise, saccade-like timing over ~30 ms.
pub fn write_nmnist_raw(dir: &Path, train_per_class: usize, test_per_class: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (split, n) in [("Train", train_per_class), ("Test", test_per_class)] {
        for d in 0..10u16 {
            let sub = dir.join(split).join(d.to_string());
            fs::create_dir_all(&sub).unwrap();
            for i in 0..n {
                let mut ev = Vec::new();
                for t in 0..30u64 {
                    for x in 4..30u16 {
                        if rng.gen_bool(0.3) {
                            let y = (3 * d + 2 + rng.gen_range(0..2)).min(33);
                            ev.push(Event { x, y, polarity: (t % 2) as u8, t_us: t * 1000 + rng.gen_range(0..1000) });
                        }
                    }
                    if rng.gen_bool(0.5) {
                        ev.push(Event { x: rng.gen_range(0..34), y: rng.gen_range(0..34), polarity: 1, t_us: t * 1000 });
                    }
                }
                ev.sort_by_key(|e| e.t_us);
                fs::write(sub.join(format!("{i:05}.bin")), encode_nmnist(&ev).unwrap()).unwrap();
            }
        }
    }
}

/// DVS-Gesture-style raw tree: each trial file holds one window per class; class `c`
/// is a bar sweeping at a class-specific speed.
pub fn write_gesture_raw(dir: &Path, train_trials: usize, test_trials: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(dir).unwrap();
    let mut lists = [String::new(), String::new()];
    for trial in 0..train_trials + test_trials {
        let name = format!("user{:02}_lab", trial + 1);
        let mut ev = Vec::new();
        let mut labels = String::from("class,startTime_usec,endTime_usec\n");
        for c in 0..11u64 {
            let start = c * 200_000;
            let end = start + 150_000;
            labels.push_str(&format!("{},{start},{end}\n", c + 1));
            for t in 0..150u64 {
                let x = ((t * (c + 1)) % 128) as u16;
                for _ in 0..6 {
                    let y = rng.gen_range(0..128);
                    ev.push(Event { x, y, polarity: rng.gen_range(0..2), t_us: start + t * 1000 });
                }
            }
        }
        fs::write(dir.join(format!("{name}.aedat")), write_aedat(&ev)).unwrap();
        fs::write(dir.join(format!("{name}_labels.csv")), labels).unwrap();
        lists[usize::from(trial >= train_trials)].push_str(&format!("{name}.aedat\n"));
    }
    fs::write(dir.join("trials_to_train.txt"), &lists[0]).unwrap();
    fs::write(dir.join("trials_to_test.txt"), &lists[1]).unwrap();
}
