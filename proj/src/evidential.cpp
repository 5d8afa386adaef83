#include "dirl/evidential.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <numbers>

namespace dirl::evidential
{

namespace
{

void check_evidence(const Evidence& e)
{
	for (double v : e)
	{
		if (!(v >= 0.0) || !std::isfinite(v))
		{
			throw DomainError("evidence must be finite and non-negative");
		}
	}
}

void check_one_hot(const OneHot& y)
{
	double sum = 0.0;
	for (double v : y)
	{
		if (v != 0.0 && v != 1.0)
		{
			throw DomainError("class target must be one-hot");
		}
		sum += v;
	}
	if (sum != 1.0)
	{
		throw DomainError("class target must be one-hot");
	}
}

} // namespace

void NIGParams::validate() const
{
	if (!(nu > 0.0) || !(alpha > 1.0) || !(beta > 0.0) || !std::isfinite(gamma) || !std::isfinite(nu) ||
		!std::isfinite(alpha) || !std::isfinite(beta))
	{
		throw DomainError("NIG parameters require nu > 0, alpha > 1, beta > 0");
	}
}

double nig_nll(const NIGParams& p, double target)
{
	p.validate();
	const double r = target - p.gamma;
	const double omega = 2.0 * p.beta * (1.0 + p.nu);
	return 0.5 * std::log(std::numbers::pi / p.nu) - p.alpha * std::log(omega) + std::lgamma(p.alpha) -
		   std::lgamma(p.alpha + 0.5) + (p.alpha + 0.5) * std::log(r * r * p.nu + omega);
}

NIGGradient nig_nll_gradient(const NIGParams& p, double target)
{
	p.validate();
	const double r = target - p.gamma;
	const double omega = 2.0 * p.beta * (1.0 + p.nu);
	const double d = r * r * p.nu + omega;
	const double a = p.alpha + 0.5;
	NIGGradient g;
	g.target = a * 2.0 * r * p.nu / d;
	g.gamma = -g.target;
	g.nu = -0.5 / p.nu - p.alpha * 2.0 * p.beta / omega + a * (r * r + 2.0 * p.beta) / d;
	g.alpha = -std::log(omega) + boost::math::digamma(p.alpha) - boost::math::digamma(a) + std::log(d);
	g.beta = -p.alpha / p.beta + a * 2.0 * (1.0 + p.nu) / d;
	return g;
}

double nig_regularizer(const NIGParams& p, double target)
{
	p.validate();
	return std::abs(target - p.gamma) * (2.0 * p.alpha + p.nu);
}

NIGGradient nig_regularizer_gradient(const NIGParams& p, double target)
{
	p.validate();
	const double r = target - p.gamma;
	const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
	NIGGradient g;
	g.target = sign * (2.0 * p.alpha + p.nu);
	g.gamma = -g.target;
	g.nu = std::abs(r);
	g.alpha = 2.0 * std::abs(r);
	g.beta = 0.0;
	return g;
}

double nig_loss(const NIGParams& p, double target, const EvidentialLossConfig& cfg)
{
	return nig_nll(p, target) + cfg.lambda * nig_regularizer(p, target);
}

double nig_uncertainty(const NIGParams& p)
{
	p.validate();
	return (1.0 + 1.0 / p.nu) * p.beta / (p.alpha - 1.0);
}

double evidential_class_loss(const Evidence& e, const OneHot& y)
{
	check_evidence(e);
	check_one_hot(y);
	double s = 0.0;
	for (double v : e)
	{
		s += v + 1.0;
	}
	double loss = 0.0;
	for (std::size_t j = 0; j < kClasses; ++j)
	{
		const double alpha_j = e[j] + 1.0;
		const double p = alpha_j / s;
		loss += (y[j] - p) * (y[j] - p) + alpha_j * (s - alpha_j) / (s * s * (s + 1.0));
	}
	return loss;
}

Evidence evidential_class_loss_gradient(const Evidence& e, const OneHot& y)
{
	check_evidence(e);
	check_one_hot(y);
	double s = 0.0;
	for (double v : e)
	{
		s += v + 1.0;
	}
	std::array<double, kClasses> p{};
	for (std::size_t j = 0; j < kClasses; ++j)
	{
		p[j] = (e[j] + 1.0) / s;
	}
	// Per class: (y - p)^2 + p (1 - p) / (S + 1), with dp_j/de_k = (delta_jk - p_j) / S and dS/de_k = 1.
	double variance_sum = 0.0;
	for (std::size_t j = 0; j < kClasses; ++j)
	{
		variance_sum += p[j] * (1.0 - p[j]);
	}
	Evidence g{};
	for (std::size_t k = 0; k < kClasses; ++k)
	{
		double acc = -variance_sum / ((s + 1.0) * (s + 1.0));
		for (std::size_t j = 0; j < kClasses; ++j)
		{
			const double dloss_dp = -2.0 * (y[j] - p[j]) + (1.0 - 2.0 * p[j]) / (s + 1.0);
			const double dp_de = ((j == k ? 1.0 : 0.0) - p[j]) / s;
			acc += dloss_dp * dp_de;
		}
		g[k] = acc;
	}
	return g;
}

ClassOutput evidential_class_output(const Evidence& e)
{
	check_evidence(e);
	double s = 0.0;
	for (double v : e)
	{
		s += v + 1.0;
	}
	ClassOutput out;
	for (std::size_t k = 0; k < kClasses; ++k)
	{
		out.probs[k] = (e[k] + 1.0) / s;
	}
	out.uncertainty = static_cast<double>(kClasses) / s;
	return out;
}

} // namespace dirl::evidential
