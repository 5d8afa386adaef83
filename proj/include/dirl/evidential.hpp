#pragma once

#include <array>
#include <stdexcept>
#include <utility>

// Evidential regression (normal-inverse-gamma) and evidential classification (Dirichlet evidence)
// losses and uncertainties, in double precision with closed-form gradients. The tensor versions used
// for network training live in dirl/evidential_ops.hpp and are checked against these.

namespace dirl::evidential
{

struct DomainError : std::invalid_argument
{
	using std::invalid_argument::invalid_argument;
};

/// Normal-inverse-gamma hyperparameters. Requires nu > 0, alpha > 1, beta > 0.
struct NIGParams
{
	double gamma = 0.0;
	double nu = 1.0;
	double alpha = 2.0;
	double beta = 1.0;

	void validate() const;
};

/// Partial derivatives with respect to (gamma, nu, alpha, beta) and the regression target.
struct NIGGradient
{
	double gamma = 0.0;
	double nu = 0.0;
	double alpha = 0.0;
	double beta = 0.0;
	double target = 0.0;
};

struct EvidentialLossConfig
{
	double lambda = 0.01;
};

/// Negative log-likelihood of the NIG marginal (Student-t), with Omega = 2 beta (1 + nu).
double nig_nll(const NIGParams& p, double target);
NIGGradient nig_nll_gradient(const NIGParams& p, double target);

/// Evidence regularizer |target - gamma| (2 alpha + nu).
double nig_regularizer(const NIGParams& p, double target);
/// Subgradient; at zero residual the gamma/target components are zero.
NIGGradient nig_regularizer_gradient(const NIGParams& p, double target);

/// nig_nll + lambda * nig_regularizer.
double nig_loss(const NIGParams& p, double target, const EvidentialLossConfig& cfg);

/// Aleatoric + epistemic variance (1 + 1/nu) beta / (alpha - 1).
double nig_uncertainty(const NIGParams& p);

inline constexpr std::size_t kClasses = 2;
using Evidence = std::array<double, kClasses>;
using OneHot = std::array<double, kClasses>;

/// Sum over classes of the squared error to the expected Dirichlet probabilities plus their variance.
double evidential_class_loss(const Evidence& e, const OneHot& y);
Evidence evidential_class_loss_gradient(const Evidence& e, const OneHot& y);

struct ClassOutput
{
	std::array<double, kClasses> probs{};
	double uncertainty = 1.0;  // K / S
};

ClassOutput evidential_class_output(const Evidence& e);

} // namespace dirl::evidential
