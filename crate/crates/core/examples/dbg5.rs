use lagcal::isotopy::*;
use lagcal::mesh::{Domain, LagMesh};
use lagcal::model::AmbientModel;
use std::sync::Arc;

fn main() {
    let r4 = Arc::new(AmbientModel::catalog("r4_product").unwrap());
    let ham = HamiltonianFamily::from_expr(
        "0.02*(1 + 0.3*t)*bump(x2/0.4)*bump(y2/0.4)",
        &r4,
        SupportKind::Compact,
    )
    .unwrap();
    // analytic time-1 graph via very fine per-point integration
    let n = 48;
    let mesh = LagMesh::from_fn(
        r4.clone(),
        Domain::Box { lo: vec![-0.5, -0.5], hi: vec![0.5, 0.5], n_per_axis: vec![n, n] },
        |u| {
            let p = vec![u[0], u[1], u[0], u[1]];
            flow_point(&r4, &ham, 0.0, 1.0, 512, &p).unwrap()
        },
    )
    .unwrap();
    println!("analytic graph defect at N={n}: {:.3e}", mesh.lagrangian_defect());
    // where is it largest?
    let mut worst = (0usize, 0.0f64);
    for node in 0..mesh.node_count() {
        let f = mesh.tangent_frame(node).unwrap();
        let v = mesh.model.omega.eval(mesh.point(node), &[&f[0].components, &f[1].components]);
        if v.abs() > worst.1 {
            worst = (node, v.abs());
        }
    }
    let multi = (worst.0 / (n + 1), worst.0 % (n + 1));
    println!("worst node {:?} -> multi {:?} defect {:.3e}", worst.0, multi, worst.1);
    println!("point: {:?}", mesh.point(worst.0));
}
