#pragma once

#include <functional>
#include <string>
#include <vector>

namespace dirl
{

/// Per-epoch losses on fixed evaluation samples. Entry 0 is measured before the first update.
struct TrainingCurve
{
	std::vector<double> train_loss;
	std::vector<double> heldout_loss;
	int epochs = 0;
	bool plateaued = false;
};

/// Stops once the best monitored loss has not improved by a relative `tolerance` for `patience` epochs.
class PlateauDetector
{
public:
	PlateauDetector(int patience, double tolerance) : patience_(patience), tolerance_(tolerance) {}

	/// Returns true when training should stop.
	bool update(double loss);

private:
	int patience_;
	double tolerance_;
	double best_ = 0.0;
	bool has_best_ = false;
	int stale_ = 0;
};

using ProgressFn = std::function<void(const std::string&)>;

} // namespace dirl
