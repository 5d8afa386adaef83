#pragma once

#include <torch/torch.h>

// Tensor forms of the evidential heads and losses. Elementwise over arbitrary leading dimensions so
// the same code serves per-step speeds and per-pixel image maps.

namespace dirl::evidential
{

struct NIGTensors
{
	torch::Tensor gamma;
	torch::Tensor nu;
	torch::Tensor alpha;
	torch::Tensor beta;
};

/// Maps unconstrained outputs onto the NIG domain: nu, beta via softplus and alpha via 1 + softplus.
/// A small floor keeps nu, beta and alpha - 1 representable in single precision.
NIGTensors nig_activation(const torch::Tensor& raw_gamma, const torch::Tensor& raw_nu, const torch::Tensor& raw_alpha,
						  const torch::Tensor& raw_beta);

torch::Tensor nig_nll(const NIGTensors& p, const torch::Tensor& target);
torch::Tensor nig_regularizer(const NIGTensors& p, const torch::Tensor& target);
torch::Tensor nig_uncertainty(const NIGTensors& p);

/// ReLU evidence from raw logits.
torch::Tensor relu_evidence(const torch::Tensor& logits);
/// Loss per sample; evidence and one-hot targets share shape [..., K], result has shape [...].
torch::Tensor evidential_class_loss(const torch::Tensor& evidence, const torch::Tensor& one_hot);
/// KL divergence from Dir(y + (1 - y) * alpha) to the uniform Dirichlet, shape [...]. Zero when all
/// evidence sits on the target class.
torch::Tensor misleading_evidence_kl(const torch::Tensor& evidence, const torch::Tensor& one_hot);
/// Class probabilities (e + 1) / S, shape [..., K].
torch::Tensor class_probabilities(const torch::Tensor& evidence);
/// K / S, shape [...].
torch::Tensor class_uncertainty(const torch::Tensor& evidence);

} // namespace dirl::evidential
