#include "fticir/losses.hpp"

#include <string>

#include "fticir/errors.hpp"

namespace fticir {

LossWeights LossWeights::from_config(const Config& cfg) {
    LossWeights w;
    w.lambda_reg = cfg.get_double("loss.lambda_reg", w.lambda_reg);
    w.tau = cfg.get_double("loss.tau", w.tau);
    w.intra_modal_negatives = cfg.get_bool("loss.intra_modal_negatives", w.intra_modal_negatives);
    w.validate();
    return w;
}

void LossWeights::validate() const {
    require(tau > 0.0, ErrorKind::config, "loss.tau must be > 0 (got " + std::to_string(tau) + ")");
    require(lambda_reg >= 0.0, ErrorKind::config, "loss.lambda_reg must be >= 0");
}

ag::Tensor contrastive_loss(const ag::Tensor& V, const ag::Tensor& T, double tau, bool intra_modal_negatives) {
    require(tau > 0.0, ErrorKind::config, "contrastive loss needs tau > 0 (got " + std::to_string(tau) + ")");
    require(V.rows() >= 1 && V.rows() == T.rows() && V.cols() == T.cols(), ErrorKind::shape,
            "contrastive loss needs two B x d matrices with B >= 1");
    const Eigen::Index B = V.rows();
    const ag::Tensor vn = ag::l2_normalize_rows(V);
    const ag::Tensor tn = ag::l2_normalize_rows(T);
    const ag::Tensor vt = ag::scale(ag::matmul_nt(vn, tn), 1.0 / tau);  // [i, j] = cos(v_i, t_j) / tau
    // [i, j] = positive logit of row i; each term is log(denominator / numerator).
    const ag::Tensor pos = ag::matmul(ag::diagonal(vt), ag::Tensor::constant(ag::Matrix::Ones(1, B)));

    ag::Tensor den_v = ag::row_sums(ag::exp(ag::sub(vt, pos)));
    ag::Tensor den_t = ag::row_sums(ag::exp(ag::sub(ag::transpose(vt), pos)));
    if (intra_modal_negatives && B > 1) {
        const ag::Matrix off = ag::Matrix::Ones(B, B) - ag::Matrix::Identity(B, B);
        const ag::Tensor tt = ag::scale(ag::matmul_nt(tn, tn), 1.0 / tau);
        const ag::Tensor vv = ag::scale(ag::matmul_nt(vn, vn), 1.0 / tau);
        den_v = ag::add(den_v, ag::row_sums(ag::mul_constant(ag::exp(ag::sub(tt, pos)), off)));
        den_t = ag::add(den_t, ag::row_sums(ag::mul_constant(ag::exp(ag::sub(vv, pos)), off)));
    }
    const ag::Tensor per_row = ag::add(ag::log(den_v), ag::log(den_t));
    return ag::scale(ag::sum(per_row), 1.0 / static_cast<double>(B));
}

ag::Tensor orthogonal_loss(const ag::Tensor& W) {
    require(W.rows() >= 1, ErrorKind::shape, "orthogonal loss needs k >= 1 rows");
    const ag::Matrix eye = ag::Matrix::Identity(W.rows(), W.rows());
    return ag::frobenius_sq(ag::add_constant(ag::matmul_nt(W, W), -eye));
}

ag::Tensor cosine_distance(const ag::Tensor& a, const ag::Tensor& b) {
    require(a.rows() >= 1 && a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::shape,
            "cosine distance needs matching B x d inputs");
    const ag::Tensor cos = ag::row_sums(ag::mul(ag::l2_normalize_rows(a), ag::l2_normalize_rows(b)));
    return ag::add_scalar(ag::scale(ag::mean(cos), -1.0), 1.0);
}

TriwiseTerms triwise_loss(const ag::Tensor& t_B, const ag::Tensor& t_S, const ag::Tensor& t_A, const ag::Tensor& t_SA) {
    TriwiseTerms out;
    out.subj = cosine_distance(t_B, t_S);
    out.attr = cosine_distance(t_B, t_A);
    out.whole = cosine_distance(t_B, t_SA);
    out.total = ag::add(ag::add(out.subj, out.attr), out.whole);
    return out;
}

ag::Tensor total_loss(const ag::Tensor& l_sim, const ag::Tensor& l_ortho, const ag::Tensor& l_tri_reg,
                      const LossWeights& w) {
    return ag::add(ag::add(l_sim, l_ortho), ag::scale(l_tri_reg, w.lambda_reg));
}

double total_loss(double l_sim, double l_ortho, double l_tri_reg, const LossWeights& w) {
    return l_sim + l_ortho + w.lambda_reg * l_tri_reg;
}

}  // namespace fticir
