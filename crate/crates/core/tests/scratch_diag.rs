use num_complex::Complex64;
use wadc_core::grid::{self, build_two_area};
use wadc_core::pipeline::{self, PipelineConfig};
use wadc_core::wadc;

#[test]
#[ignore]
fn diag_closed_loop() {
    let mut cfg = PipelineConfig::two_area_default();
    cfg.sysid.n = 120;
    cfg.sysid.probe.segment_s = 2.6;
    let dir = tempfile::tempdir().unwrap();
    pipeline::stage_simulate(&cfg, dir.path()).unwrap();
    pipeline::stage_group(&cfg, dir.path()).unwrap();
    pipeline::stage_identify(&cfg, dir.path(), None).unwrap();
    let (table, ranking) = pipeline::stage_rank(dir.path()).unwrap();
    println!("identified modes:");
    for m in &table.modes {
        println!(
            "  f={:.4} zeta={:.4} pole={:.6}+{:.6}i",
            m.mode.frequency_hz, m.mode.zeta, m.pole.re, m.pole.im
        );
    }
    let model = build_two_area();
    let ts = 0.02;
    println!("true modes:");
    for m in grid::true_modes(&model) {
        println!("  f={:.4} zeta={:.4} sigma={:.4}", m.frequency_hz, m.zeta, m.sigma);
    }
    println!(
        "target mode: f={:.4} zeta={:.4}",
        ranking.mode.mode.frequency_hz, ranking.mode.mode.zeta
    );
    for l in &ranking.loops {
        println!(
            "  loop tie{} gen{}  |R|={:.6e} arg={:.1} {:?}",
            l.pair.tie, l.pair.gen, l.abs_r, l.arg_r_deg, l.class
        );
    }
    let design = pipeline::stage_design(&cfg, dir.path()).unwrap();
    println!("wadc params: {:?}", design.params);

    // true residues for comparison
    let true_res = grid::true_residues(&model, ts).unwrap();
    let band = (0.1, 1.0);
    let true_rank = wadc_core::modal::rank_loops(&true_res, band).unwrap();
    println!(
        "true target mode f={:.4} zeta={:.4}",
        true_rank.mode.mode.frequency_hz, true_rank.mode.mode.zeta
    );
    for l in &true_rank.loops {
        println!(
            "  true loop tie{} gen{}  |R|={:.6e} arg={:.1}",
            l.pair.tie, l.pair.gen, l.abs_r, l.arg_r_deg
        );
    }

    // closed-loop modes per case
    let atts_strong = vec![wadc_attachment(&design, &cfg, &model, ts)];
    let modes = grid::closed_loop_modes(&model, ts, &atts_strong).unwrap();
    println!("closed-loop modes (strong):");
    for m in &modes {
        println!(
            "  sigma={:+.4} f={:.4} zeta={:+.4} {}",
            m.sigma,
            m.frequency_hz,
            m.zeta,
            if m.sigma >= 0.0 { "<-- UNSTABLE" } else { "" }
        );
    }

    // what would the design on the true continuous residue do, no delay?
    let lambda = true_rank.mode.mode.lambda();
    let entry = true_res
        .entries
        .iter()
        .find(|e| e.mode_idx == true_rank.mode_idx && e.pair == true_rank.loops[0].pair)
        .unwrap();
    let r_c = entry.residue * lambda / ((lambda * ts).exp() - Complex64::new(1.0, 0.0));
    println!("true r_d = {:?}  r_c = {:?}", entry.residue, r_c);
    let p0 = wadc::design(r_c, true_rank.mode.mode, 0.15, 10.0, 60.0, (-0.15, 0.15)).unwrap();
    println!("no-delay params on true residue: {p0:?}");
    let att0 = grid::AttachedController {
        label: "wadc0".into(),
        controller: wadc::realize(&p0, ts).unwrap(),
        input: grid::MeasChannel::Tie(true_rank.loops[0].pair.tie - 1),
        input_scale: 1.0 / model.s_base_mva,
        output_gen: true_rank.loops[0].pair.gen - 1,
        delay_ms: 0.0,
    };
    let modes0 = grid::closed_loop_modes(&model, ts, &[att0]).unwrap();
    println!("closed-loop modes (true residue, no delay):");
    for m in &modes0 {
        println!(
            "  sigma={:+.4} f={:.4} zeta={:+.4} {}",
            m.sigma,
            m.frequency_hz,
            m.zeta,
            if m.sigma >= 0.0 { "<-- UNSTABLE" } else { "" }
        );
    }
}

fn wadc_attachment(
    design: &pipeline::DesignOutcome,
    cfg: &PipelineConfig,
    model: &grid::LinearGridModel,
    ts: f64,
) -> grid::AttachedController {
    grid::AttachedController {
        label: "wadc".into(),
        controller: wadc::realize(&design.params, ts).unwrap(),
        input: grid::MeasChannel::Tie(design.strong.pair.tie - 1),
        input_scale: 1.0 / model.s_base_mva,
        output_gen: design.strong.pair.gen - 1,
        delay_ms: cfg.delay_ms,
    }
}
