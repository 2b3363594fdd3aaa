use lagcal::isotopy::*;
use lagcal::mesh::LagMesh;
use lagcal::model::AmbientModel;
use std::sync::Arc;

fn main() {
    let t4 = Arc::new(AmbientModel::catalog("t2n_cy").unwrap());
    // gentle field so the aliasing floor sits below the integrator drift
    let ham = HamiltonianFamily::from_expr(
        "0.02*sin(2*pi*(x1 + y2)) + 0.01*cos(2*pi*x2)*sin(2*pi*y1)",
        &t4,
        SupportKind::Normalized,
    )
    .unwrap();
    let sub = LagMesh::flat_subtorus(t4.clone(), 48).unwrap();
    for steps in [6usize, 12, 24, 512] {
        let p = IsotopyPath::flow_with_limit(&sub, ham.clone(), 0.0, 1.0, steps, 1e9).unwrap();
        println!(
            "drift steps={steps}: {:.3e}",
            p.meshes.last().unwrap().lagrangian_defect()
        );
    }
}
