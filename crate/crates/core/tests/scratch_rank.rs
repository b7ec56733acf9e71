//! Temporary probe: true ranking on the chain with the fixed oracle.

use wadc_core::grid::{build_chain, oracle::true_residues};
use wadc_core::modal::rank_loops;

#[test]
#[ignore]
fn diag_true_rank() {
    for seed in [11u64, 1, 2, 3, 4, 5] {
        let m = build_chain(4, 2, seed).unwrap();
        let table = true_residues(&m, 0.02).unwrap();
        let ranking = rank_loops(&table, (0.1, 1.0)).unwrap();
        let t = &table.modes[ranking.mode_idx].mode;
        print!(
            "seed {seed}: target f={:.4} zeta={:.4} top3:",
            t.frequency_hz, t.zeta
        );
        for l in ranking.loops.iter().take(3) {
            print!(" ({},{})|R|={:.3e}", l.pair.tie, l.pair.gen, l.abs_r);
        }
        let last = ranking.loops.last().unwrap();
        println!("  weakest ({},{})|R|={:.3e}", last.pair.tie, last.pair.gen, last.abs_r);
    }
}
