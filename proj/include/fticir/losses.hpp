#pragma once

// Training objectives over autograd tensors. Inputs hold one sample per row.

#include "fticir/autograd.hpp"
#include "fticir/config.hpp"

namespace fticir {

struct LossWeights {
    double lambda_reg = 1.4;
    double tau = 0.2;
    // Off: plain symmetric InfoNCE without the intra-modal negatives.
    bool intra_modal_negatives = true;

    static LossWeights from_config(const Config& cfg);
    void validate() const;
};

// Symmetric image/text contrastive loss with intra-modal negatives in both
// denominators, averaged over the B rows. V and T are B x d.
ag::Tensor contrastive_loss(const ag::Tensor& V, const ag::Tensor& T, double tau, bool intra_modal_negatives = true);

// ||W W^T - I_k||_F^2 with the k features as rows of W.
ag::Tensor orthogonal_loss(const ag::Tensor& W);

// 1 - cos per row, averaged over rows. Zero vectors have cosine 0.
ag::Tensor cosine_distance(const ag::Tensor& a, const ag::Tensor& b);

struct TriwiseTerms {
    ag::Tensor subj;
    ag::Tensor attr;
    ag::Tensor whole;
    ag::Tensor total;
};

// Each argument is B x d; terms are batch means.
TriwiseTerms triwise_loss(const ag::Tensor& t_B, const ag::Tensor& t_S, const ag::Tensor& t_A, const ag::Tensor& t_SA);

ag::Tensor total_loss(const ag::Tensor& l_sim, const ag::Tensor& l_ortho, const ag::Tensor& l_tri_reg,
                      const LossWeights& w);
double total_loss(double l_sim, double l_ortho, double l_tri_reg, const LossWeights& w);

}  // namespace fticir
