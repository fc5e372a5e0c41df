//! Gallery/probe splits over a synthetic manifest under each activity and
//! view mode, with their invariant checks.

use actbio::datapipe::{build_protocol, ActivityMode, ViewMode, DEFAULT_PROBE_FRACTION};
use actbio::evaluation::chance_rank1;
use actbio::synth::{generate_world, SyntheticWorldConfig};

fn main() -> anyhow::Result<()> {
    let world = generate_world(&SyntheticWorldConfig { clips_per_pair: 3, ..Default::default() })?;
    for am in [ActivityMode::Same, ActivityMode::Cross] {
        for vm in [ViewMode::None, ViewMode::ViewPlus, ViewMode::ViewMinus] {
            match build_protocol(&world.manifest, am, vm, DEFAULT_PROBE_FRACTION, 0) {
                Ok(p) => {
                    let g: Vec<u32> = p.gallery.iter().map(|r| r.actor_id).collect();
                    let q: Vec<u32> = p.probe.iter().map(|r| r.actor_id).collect();
                    let ok = p.check_invariants().map(|_| "ok".to_string()).unwrap_or_else(|e| e);
                    println!(
                        "{:>5} {:>10}: gallery {:>3} probe {:>3} chance rank-1 {:.3} invariants {ok}",
                        am.to_string(),
                        vm.to_string(),
                        g.len(),
                        q.len(),
                        chance_rank1(&q, &g)
                    );
                }
                Err(e) => println!("{:>5} {:>10}: {e}", am.to_string(), vm.to_string()),
            }
        }
    }
    Ok(())
}
