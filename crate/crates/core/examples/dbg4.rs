use lagcal::isotopy::*;
use lagcal::mesh::{Domain, LagMesh};
use lagcal::model::AmbientModel;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let r4 = Arc::new(AmbientModel::catalog("r4_product").unwrap());
    let ham = HamiltonianFamily::from_expr(
        "0.02*(1 + 0.3*t)*bump(x2/0.4)*bump(y2/0.4)",
        &r4,
        SupportKind::Compact,
    )
    .unwrap();
    for n in [32usize, 48, 64] {
        let diag = LagMesh::from_fn(
            r4.clone(),
            Domain::Box { lo: vec![-0.5, -0.5], hi: vec![0.5, 0.5], n_per_axis: vec![n, n] },
            |u| vec![u[0], u[1], u[0], u[1]],
        )
        .unwrap();
        let t0 = Instant::now();
        match IsotopyPath::flow_with_limit(&diag, ham.clone(), 0.0, 1.0, 50, 1e9) {
            Ok(p) => println!(
                "N={n}: final defect {:.3e}  max defect {:.3e}  ({} ms)",
                p.meshes.last().unwrap().lagrangian_defect(),
                p.max_defect(),
                t0.elapsed().as_millis()
            ),
            Err(e) => println!("N={n}: {e}"),
        }
    }
}
