use platoon_core::train::gradcheck;

#[test]
#[ignore]
fn print_gradcheck_errors() {
    let r = gradcheck(5, 2, None);
    for g in &r.groups {
        if g.max_rel_err > 1e-6 {
            println!("{}: {:.4e}", g.name, g.max_rel_err);
        }
    }
}
