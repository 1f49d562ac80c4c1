use adfgof::error_models::{gaussian_model, make_phi_family, norm_cdf, norm_pdf};

fn main() {
    let m = gaussian_model();
    let fam = make_phi_family(&m, |y| y).unwrap();
    println!("total = {:e}", fam.total() - 1.0);
    println!("L(0) - 0.5   = {:e}", fam.l_value(0.0) - 0.5);
    let expect = norm_cdf(1.0) - norm_pdf(1.0);
    println!("L(1) - exact = {:e}", fam.l_value(1.0) - expect);
}
