//! The three loss terms, their total, and a finite-difference check of the
//! analytic gradients.

use contrast_occlusion::objectives::{
    grad_check, grad_face_penalty, grad_recall_face, grad_recall_occ, loss_face_penalty, loss_recall_face,
    loss_recall_occ, loss_total, LossWeights,
};

fn main() -> contrast_occlusion::Result<()> {
    let w = LossWeights::default();
    let q_occ = [0.9, 0.7, 0.55];
    let q_face = [0.1, 0.3, 0.6, 0.2];

    println!("recall_occ   {:.6}", loss_recall_occ(&q_occ)?);
    println!("recall_face  {:.6}", loss_recall_face(&q_face)?);
    println!("face_penalty {:.6}", loss_face_penalty(&q_face, w.alpha)?);
    println!("total        {:.6}", loss_total(&q_occ, &q_face, &w)?);
    println!("total at q = 0.5 everywhere: {:.6}", loss_total(&[0.5, 0.5], &[0.5], &w)?);

    let h = 1e-6;
    let e1 = grad_check(|q| loss_recall_occ(q).unwrap(), &grad_recall_occ(&q_occ), &q_occ, h);
    let e2 = grad_check(|q| loss_recall_face(q).unwrap(), &grad_recall_face(&q_face), &q_face, h);
    let e3 = grad_check(
        |q| loss_face_penalty(q, w.alpha).unwrap(),
        &grad_face_penalty(&q_face, w.alpha),
        &q_face,
        h,
    );
    println!("max relative gradient error: {:.1e} {:.1e} {:.1e}", e1, e2, e3);
    Ok(())
}
