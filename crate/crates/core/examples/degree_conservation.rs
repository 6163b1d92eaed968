//! Flow a degree-1 glued bubble and track the topological degree while the
//! gradient stays resolved (sup_e * h^2 <= 0.5).

use alpha_flow::diagnostics::degree;
use alpha_flow::flow::{run, FlowParams, FlowState, StopRule};
use alpha_flow::geometry::TorusGrid;
use alpha_flow::runner::glued_bubble_field;

fn main() {
    let grid = TorusGrid::new(128, 2.0).unwrap();
    let h = grid.spacing();
    let initial = glued_bubble_field(grid, 0.1, 1.0, 1.0).unwrap();
    let params = FlowParams::new(1.05);
    let stop = StopRule {
        t_max: Some(0.05),
        // stop once the concentration outruns the mesh
        sup_e_above: Some(0.5 / (h * h)),
        ..Default::default()
    };
    let result = run(FlowState::new(initial), &params, stop, 25).unwrap();
    println!("stop reason: {:?}", result.stop_reason);
    println!("{:>10} {:>12} {:>14} {:>8} {:>12}", "step", "t", "degree", "int", "sup_e*h^2");
    for snap in &result.snapshots {
        let (d_real, d_int) = degree(&snap.field).unwrap();
        println!(
            "{:>10} {:>12.6} {:>14.9} {:>8} {:>12.4}",
            snap.step,
            snap.t,
            d_real,
            d_int,
            snap.sup_e * h * h
        );
    }
}
