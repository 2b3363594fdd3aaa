use lagcal::isotopy::*;
use lagcal::mesh::LagMesh;
use lagcal::model::AmbientModel;
use std::sync::Arc;

fn main() {
    let t2 = Arc::new(AmbientModel::catalog("t2_cy").unwrap());
    let mesh0 = LagMesh::graph_circle(t2.clone(), 64, |x| 0.1 * (2.0 * std::f64::consts::PI * x).sin()).unwrap();
    let fam = HamiltonianFamily::from_expr("0.02*sin(2*pi*y)*cos(2*pi*x)", &t2, SupportKind::Normalized).unwrap();
    let path = IsotopyPath::flow(&mesh0, fam.clone(), 100).unwrap();
    for j in [0usize, 1, 2, 25, 50, 98, 99, 100] {
        let r = path.hamiltonian_restriction_residual(j).unwrap();
        println!("j={j}: residual {r:.3e}");
    }
    // same for the pure vertical translation H = -0.3 x ... not global on torus but fine pointwise
    let circle = LagMesh::flat_circle(t2.clone(), 64).unwrap();
    let fam2 = HamiltonianFamily::from_expr("0 - 0.3*x", &t2, SupportKind::Compact).unwrap();
    let path2 = IsotopyPath::flow(&circle, fam2, 100).unwrap();
    for j in [0usize, 50, 100] {
        let r = path2.hamiltonian_restriction_residual(j).unwrap();
        println!("translation j={j}: residual {r:.3e}");
    }
}
