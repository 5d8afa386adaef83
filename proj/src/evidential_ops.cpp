#include "dirl/evidential_ops.hpp"

#include <cmath>
#include <numbers>

namespace dirl::evidential
{

namespace
{
constexpr double kFloor = 1e-6;
}

NIGTensors nig_activation(const torch::Tensor& raw_gamma, const torch::Tensor& raw_nu, const torch::Tensor& raw_alpha,
						  const torch::Tensor& raw_beta)
{
	return {
		raw_gamma,
		torch::softplus(raw_nu) + kFloor,
		torch::softplus(raw_alpha) + 1.0 + kFloor,
		torch::softplus(raw_beta) + kFloor,
	};
}

torch::Tensor nig_nll(const NIGTensors& p, const torch::Tensor& target)
{
	const auto omega = 2.0 * p.beta * (1.0 + p.nu);
	const auto r = target - p.gamma;
	return 0.5 * (std::log(std::numbers::pi) - torch::log(p.nu)) - p.alpha * torch::log(omega) + torch::lgamma(p.alpha) -
		   torch::lgamma(p.alpha + 0.5) + (p.alpha + 0.5) * torch::log(r * r * p.nu + omega);
}

torch::Tensor nig_regularizer(const NIGTensors& p, const torch::Tensor& target)
{
	return torch::abs(target - p.gamma) * (2.0 * p.alpha + p.nu);
}

torch::Tensor nig_uncertainty(const NIGTensors& p)
{
	return (1.0 + 1.0 / p.nu) * p.beta / (p.alpha - 1.0);
}

torch::Tensor relu_evidence(const torch::Tensor& logits)
{
	return torch::relu(logits);
}

torch::Tensor evidential_class_loss(const torch::Tensor& evidence, const torch::Tensor& one_hot)
{
	const auto alpha = evidence + 1.0;
	const auto s = alpha.sum(-1, true);
	const auto p = alpha / s;
	const auto err = (one_hot - p).pow(2);
	const auto var = alpha * (s - alpha) / (s * s * (s + 1.0));
	return (err + var).sum(-1);
}

torch::Tensor misleading_evidence_kl(const torch::Tensor& evidence, const torch::Tensor& one_hot)
{
	const auto alpha = one_hot + (1.0 - one_hot) * (evidence + 1.0);
	const auto s = alpha.sum(-1, true);
	const double k = static_cast<double>(alpha.size(-1));
	return (torch::lgamma(s.squeeze(-1)) - std::lgamma(k) - torch::lgamma(alpha).sum(-1) +
			((alpha - 1.0) * (torch::digamma(alpha) - torch::digamma(s))).sum(-1));
}

torch::Tensor class_probabilities(const torch::Tensor& evidence)
{
	const auto alpha = evidence + 1.0;
	return alpha / alpha.sum(-1, true);
}

torch::Tensor class_uncertainty(const torch::Tensor& evidence)
{
	const auto k = static_cast<double>(evidence.size(-1));
	return k / (evidence + 1.0).sum(-1);
}

} // namespace dirl::evidential
