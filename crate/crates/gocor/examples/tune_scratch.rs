// Temporary tuning harness; deleted before ship.
use gocor::objective::{QueryObjectiveParams, ReferenceObjectiveParams};
use gocor::synthbench::*;
use gocor::*;

fn probe_stats(
    vol: &CorrespondenceVolume,
    scene: &SyntheticScene,
    rho: f64,
) -> (f64, f64, f64, f64) {
    let t = scene.true_match();
    let tc = vol
        .value(scene.probe.0, scene.probe.1, t.0 as isize, t.1 as isize)
        .unwrap();
    let d = scene.distractor_locations[0];
    let dc = vol
        .value(scene.probe.0, scene.probe.1, d.0 as isize, d.1 as isize)
        .unwrap();
    let slice = vol.slice(scene.probe.0, scene.probe.1);
    let w = vol.width();
    let mut best_bg = f64::NEG_INFINITY;
    for (cell, &c) in slice.iter().enumerate() {
        let (k, l) = (cell / w, cell % w);
        let far_true = (((k as isize - t.0 as isize).pow(2) + (l as isize - t.1 as isize).pow(2))
            as f64)
            .sqrt()
            > rho;
        let far_distr = (((k as isize - d.0 as isize).pow(2) + (l as isize - d.1 as isize).pow(2))
            as f64)
            .sqrt()
            > rho;
        if far_true && far_distr && c > best_bg {
            best_bg = c;
        }
    }
    let margin = margin_statistic(vol, scene.probe, (t.0 as isize, t.1 as isize), rho).unwrap();
    (tc, dc, best_bg, margin)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let lambda: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let iters: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(6);
    let curv: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2.0);
    let seeds: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(5);

    let use_query = args.get(6).map(|s| s == "q").unwrap_or(false);
    println!("noise={noise} lambda={lambda} iters={iters} curv={curv} use_query={use_query}");
    let mut grown_n = 0;
    let mut hit_n = 0;
    let mut both_n = 0;
    for seed in 0..seeds {
        let scene = make_repetitive_scene(32, 32, 16, 2, (2, 1), noise, seed).unwrap();
        let params = ObjectiveParams {
            reference: ReferenceObjectiveParams::paper_init(),
            query: QueryObjectiveParams::seeded_default(7002),
        };
        let cfg = SolverConfig {
            mode: VolumeKind::Global,
            num_iter: iters,
            lambda,
            use_query,
            curvature_scale: curv,
        };
        let init = if std::env::var("SIMPLE").is_ok() { InitializerConfig::simple() } else { InitializerConfig::context_aware() };
        let mut w = init_filter_map(&scene.f_r, &init).unwrap().w;
        print!("seed {seed}: ");
        let mut m0 = 0.0;
        let mut mlast = 0.0;
        let mut hit = false;
        for n in 0..=iters {
            if n > 0 {
                let step = sd_iteration(&w, &scene.f_r, &scene.f_q, &params, &cfg).unwrap();
                if std::env::var("TRACE").is_ok() {
                    print!(
                        " {{L={:.1} a={:.2e} g={:.1}}}",
                        step.loss, step.alpha, step.grad_norm
                    );
                }
                w = step.w_next;
            }
            let vol = correlate(&w, &scene.f_q, cfg.mode).unwrap();
            let (tc, dc, bg, m) = probe_stats(&vol, &scene, 2.0);
            if n == 0 {
                m0 = m;
            }
            if n == 3.min(iters) {
                mlast = m;
                hit = m > 0.0;
            }
            print!(" [n={n} t={tc:.3} d={dc:.3} bg={bg:.3} m={m:.3}]");
        }
        let grown = mlast > m0;
        if grown {
            grown_n += 1;
        }
        if hit {
            hit_n += 1;
        }
        if grown && hit {
            both_n += 1;
        }
        println!("  grown={grown} hit={hit}");
    }
    println!("grown {grown_n}/{seeds}  hit {hit_n}/{seeds}  both {both_n}/{seeds}");
}
