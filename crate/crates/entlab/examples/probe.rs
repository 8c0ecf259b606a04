use entlab::stability::{run_campaign, CampaignConfig};
use std::time::Instant;

fn main() {
    let cfg = CampaignConfig::default();
    let t0 = Instant::now();
    let result = run_campaign(&cfg).unwrap();
    println!(
        "instances {} rows {} failures {} in {:.1}s",
        result.n_instances,
        result.rows.len(),
        result.n_failures,
        t0.elapsed().as_secs_f64()
    );
    for row in result.rows.iter().filter(|r| !r.pass) {
        println!(
            "FAIL idx {} {} lhs {:.6e} rhs {:.6e}",
            row.instance_id, row.check, row.lhs, row.rhs
        );
    }
}
