use lagcal::expr::ScalarExpr;
use lagcal::isotopy::*;
use lagcal::mesh::{Domain, LagMesh, Normalization};
use lagcal::model::{AmbientModel, ScalarFn};
use std::sync::Arc;

fn main() {

    let t2 = Arc::new(AmbientModel::catalog("t2_cy").unwrap());

    // flow reversal error vs steps
    let mesh0 = LagMesh::graph_circle(t2.clone(), 128, |x| 0.05 * (2.0 * std::f64::consts::PI * x).sin()).unwrap();
    let fam = HamiltonianFamily::from_expr("0.05*sin(2*pi*y)*cos(2*pi*x)", &t2, SupportKind::Normalized).unwrap();
    for steps in [50usize, 100, 200] {
        let fwd = IsotopyPath::flow(&mesh0, fam.clone(), steps).unwrap();
        let back_fam = {
            let f2 = fam.clone();
            HamiltonianFamily::new(SupportKind::Normalized, move |t, p| -f2.value(1.0 - t, p))
                .with_gradient({
                    let f3 = fam.clone();
                    move |t, p| f3.gradient(1.0 - t, p).into_iter().map(|v| -v).collect()
                })
        };
        let rev = IsotopyPath::flow(fwd.meshes.last().unwrap(), back_fam, steps).unwrap();
        let err: f64 = rev
            .meshes
            .last()
            .unwrap()
            .points_raw()
            .iter()
            .zip(mesh0.points_raw())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("reversal steps={steps}: {err:.3e}");
    }

    // velocity form residual vs restricted dH for a flowing graph
    let path = IsotopyPath::flow(&mesh0, fam.clone(), 100).unwrap();
    let mut worst = 0.0f64;
    for j in [0, 25, 50, 99, 100] {
        worst = worst.max(path.hamiltonian_restriction_residual(j).unwrap());
    }
    println!("restriction residual: {worst:.3e}");
    // velocity exactness: cycle integrals along the path
    let mut worst_cycle = 0.0f64;
    for j in 0..path.sample_count() {
        let alpha = path.velocity_form(j).unwrap();
        for c in alpha.cycle_integrals(&path.meshes[j]) {
            worst_cycle = worst_cycle.max(c.abs());
        }
    }
    println!("worst cycle integral: {worst_cycle:.3e}");

    // product-model drift ratio
    let r4 = Arc::new(AmbientModel::catalog("r4_product").unwrap());
    let ham = HamiltonianFamily::from_expr(
        "0.02*(1 + 0.3*t)*bump(x2/0.4)*bump(y2/0.4)",
        &r4,
        SupportKind::Compact,
    )
    .unwrap();
    let diag = LagMesh::from_fn(
        r4.clone(),
        Domain::Box { lo: vec![-0.5, -0.5], hi: vec![0.5, 0.5], n_per_axis: vec![24, 24] },
        |u| vec![u[0], u[1], u[0], u[1]],
    )
    .unwrap();
    let mut defects = vec![];
    for steps in [25usize, 50, 100] {
        let p = IsotopyPath::flow(&diag, ham.clone(), steps).unwrap();
        let d = p.meshes.last().unwrap().lagrangian_defect();
        defects.push(d);
        println!("drift steps={steps}: defect {d:.3e}");
    }
    println!("ratios: {:.1} {:.1}", defects[0] / defects[1], defects[1] / defects[2]);

    // composed two-parameter family on t2
    let h0 = HamiltonianFamily::from_expr("0.1*sin(2*pi*y)", &t2, SupportKind::Normalized).unwrap();
    let k0 = HamiltonianFamily::from_expr("0.1*cos(2*pi*x)", &t2, SupportKind::Normalized).unwrap();
    let fam2 = TwoParamFamily::composed_flows(t2.clone(), h0, k0, 64);
    let pts = lagcal::numerics::sample_points(2, &[0.0, 0.0], &[1.0, 1.0], 40);
    let rep = two_param_residual(&t2, &fam2, &[0.0, 0.25, 0.5], &[0.0, 0.5], &pts, 1e-3);
    println!("composed: dev {:.3e} const {:.3e}", rep.max_spatial_deviation, rep.max_constant);

    // lemma bracket identity on t2 graph mesh
    let mesh = LagMesh::graph_circle(t2.clone(), 128, |x| 0.05 * (2.0 * std::f64::consts::PI * x).sin()).unwrap();
    let h = ScalarFn::from_expr("0.3*cos(2*pi*x)*sin(2*pi*y)", &["x", "y"]).unwrap();
    let k = ScalarFn::from_expr("0.2*sin(2*pi*x) + 0.1*cos(2*pi*y)", &["x", "y"]).unwrap();
    let beta = t2.beta.clone().unwrap();
    let r = lemma_bracket_residual(&mesh, &h, &k, &beta).unwrap();
    println!("lemma_ob t2: {r:.3e}");

    // lemma on product model with bump H, K
    let hp = ScalarFn::from_expr("0.06*bump(x1/0.4)*bump(y1/0.4)*bump(x2/0.4)*bump(y2/0.4)", &["x1","y1","x2","y2"]).unwrap();
    let kp = ScalarFn::from_expr("0.05*bump((x1-0.1)/0.4)*bump(y1/0.4)*bump(x2/0.4)*bump((y2+0.1)/0.4)", &["x1","y1","x2","y2"]).unwrap();
    let beta4 = r4.beta.clone().unwrap();
    let r4m = lemma_bracket_residual(&diag, &hp, &kp, &beta4).unwrap();
    println!("lemma_ob r4: {r4m:.3e}");

    // graph(t u) velocity potential roundtrip
    let r2e = Arc::new(AmbientModel::catalog("r2_exact").unwrap());
    let cap_u = ScalarExpr::parse("0.5*bump(x/0.35)", &["x"]).unwrap();
    let u = cap_u.diff(0).unwrap();
    let n = 128;
    let times: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let meshes: Vec<LagMesh> = times
        .iter()
        .map(|&t| LagMesh::graph_box(r2e.clone(), -0.5, 0.5, n, |x| t * u.eval(&[x])).unwrap())
        .collect();
    let gpath = IsotopyPath::from_meshes(meshes, times).unwrap();
    let alpha = gpath.velocity_form(10).unwrap();
    let mut worst_alpha = 0.0f64;
    for node in 0..=n {
        let x = -0.5 + node as f64 / n as f64;
        worst_alpha = worst_alpha.max((alpha.component(node, 0) + u.eval(&[x])).abs());
    }
    println!("graph(tu) alpha vs -u: {worst_alpha:.3e}");
    let rec = gpath.potential(10, None).unwrap();
    let mut worst_h = 0.0f64;
    for node in 0..=n {
        let x = -0.5 + node as f64 / n as f64;
        worst_h = worst_h.max((rec.field[node] + cap_u.eval(&[x])).abs());
    }
    println!("graph(tu) h vs -U: {worst_h:.3e} resid {:.3e}", rec.residual);
    assert_eq!(gpath.normalization, Normalization::CompactSupport);
}

#[allow(dead_code)]
fn drift_measurement() {
    let t4 = Arc::new(AmbientModel::catalog("t2n_cy").unwrap());
    let sub = LagMesh::flat_subtorus(t4.clone(), 48).unwrap();
    let ham = HamiltonianFamily::from_expr(
        "0.05*sin(2*pi*(x1 + y2)) + 0.02*cos(2*pi*x2)*sin(2*pi*y1)",
        &t4,
        SupportKind::Normalized,
    )
    .unwrap();
    for steps in [32usize, 64, 128] {
        let p = IsotopyPath::flow(&sub, ham.clone(), steps).unwrap();
        println!(
            "t4 drift steps={steps}: defect {:.3e}",
            p.meshes.last().unwrap().lagrangian_defect()
        );
    }
}
