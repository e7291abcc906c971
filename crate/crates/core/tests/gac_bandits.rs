use gaclab::envs::{correlated_bandit_reward, Env};
use gaclab::gac::{GacConfig, TrainOptions, Trainer};
use gaclab::quantile::ActorKind;

fn desk_config(env: &Env, kind: ActorKind) -> GacConfig {
    let mut cfg = GacConfig::new(kind, env.spec());
    cfg.batch_size = 16;
    cfg.candidates = 16;
    cfg.value_samples = 8;
    cfg.kappa = 0.01;
    cfg
}

fn grid_optimum() -> f64 {
    let n = 200;
    let at = |i: usize| -1.0 + 2.0 * i as f64 / (n - 1) as f64;
    (0..n)
        .flat_map(|i| (0..n).map(move |j| correlated_bandit_reward(&[at(i), at(j)]).unwrap()))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn both_actors_find_the_ridge() {
    let best = grid_optimum();
    assert!((best - 1.0).abs() < 1e-3);
    let opts = TrainOptions { steps: 5000, eval_interval: 5000, eval_episodes: 50, log_wall_time: false };
    for kind in [ActorKind::Aiqn, ActorKind::Iqn] {
        let env = Env::by_name("bandit_ridge2d").unwrap();
        let cfg = desk_config(&env, kind);
        let mut trainer = Trainer::new(env, cfg, 0).unwrap();
        let rows = trainer.run(&opts, |_| Ok(())).unwrap();
        let r = rows.last().unwrap().eval_return_mean;
        assert!(r > best - 0.05, "{kind}: {r} vs grid optimum {best}");
    }
}
