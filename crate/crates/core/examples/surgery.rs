//! Surgery toolkit closed forms and an end-to-end competitor: replace a
//! wastefully parametrized neck by cones plus the minimal geodesic neck and
//! verify the energy strictly drops.

use alpha_flow::bubbletree::*;
use alpha_flow::diagnostics::dirichlet_energy;
use alpha_flow::geometry::TorusGrid;
use std::f64::consts::PI;

fn main() {
    // geodesic neck closed form 2 pi d^2 / ln(b/a)
    let p = vec![0.0, 0.0, 1.0];
    let q = vec![1.0, 0.0, 0.0];
    let spec = NeckSpec::new(p.clone(), q.clone(), 1.0, 4.0f64.exp()).unwrap();
    let neck = geodesic_neck(&spec).unwrap();
    println!(
        "geodesic neck: computed {:.6}, closed form pi^3/8 = {:.6}",
        neck.energy,
        PI.powi(3) / 8.0
    );

    // squeeze ratios of the equator wrap on cylinders of growing length
    for kk in [20.0, 50.0, 100.0, 400.0] {
        let wrap =
            CylinderMap::from_fn(128, 201, (0.0, kk), 3, |th, _| vec![th.cos(), th.sin(), 0.0]);
        let (_, ratio) = squeeze_map(&wrap).unwrap();
        println!("squeeze K = {kk:>5}: ratio {ratio:.6} (exact {:.6})", 1.0 - 8.0 / kk);
    }

    // competitor on a synthetic oscillating neck
    let grid = TorusGrid::new(256, 1.0).unwrap();
    let d = 0.15f64;
    let qn = vec![d.cos(), d.sin(), 0.0];
    let pn = vec![1.0, 0.0, 0.0];
    let spec = NeckSpec::new(pn, qn, 0.033, 0.22).unwrap();
    let base = geodesic_neck_energy(d, spec.b / spec.a);
    let amplitude = ((0.5 / base - 1.0) / (2.0 * PI * PI)).sqrt();
    let field = synthetic_long_neck(grid, (128, 128), &spec, amplitude).unwrap();
    let e_field = dirichlet_energy(&field);

    let mut tree = build_tree(&field, 4.0 * PI, 2.0).unwrap();
    if tree.nodes.is_empty() {
        let (_, _, chart) = detect_and_rescale(&field, None, 4).unwrap();
        tree.nodes.push(BubbleNode {
            center: (128, 128),
            scale: spec.a,
            density_scale: spec.a,
            bubble_field: chart,
            bubble_energy: 0.0,
            neck_inner: spec.a,
            neck_outer: spec.b,
            neck_energy: e_field,
            children: Vec::new(),
        });
    }
    let (competitor, regions) = build_competitor(&field, &tree, &[spec]).unwrap();
    let e_comp = dirichlet_energy(&competitor);
    println!("field energy      {e_field:.6}");
    println!("competitor energy {e_comp:.6}");
    println!("surgery regions   {regions:#?}");
    println!("strict improvement: {}", e_comp < e_field);
}
