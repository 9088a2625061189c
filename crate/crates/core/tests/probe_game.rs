use qsmooth::model::ScenarioConfig;
use qsmooth::paststate::{guessing_game, GameConfig};

#[test]
fn probe() {
    for seed in [7u64, 8] {
        let cfg = GameConfig::new(ScenarioConfig::rabi_default(), 10_000, seed).unwrap();
        let t = std::time::Instant::now();
        match guessing_game(&cfg) {
            Ok(r) => eprintln!(
                "seed {seed}: failures {} fwd {:.4} past {:.4} gap {:.4} ({:.0?})",
                r.failures,
                r.forward_accuracy,
                r.past_accuracy,
                r.past_accuracy - r.forward_accuracy,
                t.elapsed()
            ),
            Err(e) => eprintln!("seed {seed}: ABORT {e:?} ({:.0?})", t.elapsed()),
        }
    }
}
