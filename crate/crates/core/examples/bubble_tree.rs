//! Decompose a field carrying a single bubble into body + bubble + neck and
//! print the tree with its energy bookkeeping.

use alpha_flow::bubbletree::{build_tree, BubbleNode};
use alpha_flow::diagnostics::dirichlet_energy;
use alpha_flow::geometry::TorusGrid;
use alpha_flow::runner::glued_bubble_field;
use std::f64::consts::PI;

fn print_node(node: &BubbleNode, depth: usize) {
    let pad = "  ".repeat(depth + 1);
    println!(
        "{pad}bubble at node {:?}: scale {:.4}, density scale {:.4}",
        node.center, node.scale, node.density_scale
    );
    println!(
        "{pad}  energy {:.4} ({:.2}% of 8 pi), neck [{:.4}, {:.4}] carrying {:.4}",
        node.bubble_energy,
        100.0 * node.bubble_energy / (8.0 * PI),
        node.neck_inner,
        node.neck_outer,
        node.neck_energy
    );
    for child in &node.children {
        print_node(child, depth + 1);
    }
}

fn main() {
    let grid = TorusGrid::new(256, 4.0).unwrap();
    let field = glued_bubble_field(grid, 0.1, 2.0, 2.0).unwrap();
    println!("field energy: {:.4} (8 pi = {:.4})", dirichlet_energy(&field), 8.0 * PI);

    let epsilon_1 = 4.0 * PI;
    let tree = build_tree(&field, epsilon_1, epsilon_1 / 6.0).unwrap();
    println!("total in:     {:.4}", tree.total_energy_in);
    println!("body:         {:.4}", tree.body_energy);
    println!("residual:     {:.2e}", tree.identity_residual);
    for node in &tree.nodes {
        print_node(node, 0);
    }
}
