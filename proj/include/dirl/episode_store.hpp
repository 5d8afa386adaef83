#pragma once

#include "dirl/sim.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dirl
{

struct StoreError : std::runtime_error
{
	using std::runtime_error::runtime_error;
};

struct InsufficientData : StoreError
{
	using StoreError::StoreError;
};

enum class EpisodeSource
{
	expert,
	policy,
};

const char* to_string(EpisodeSource s);
EpisodeSource source_from_string(const std::string& s);

/// Action as persisted (32-bit components).
struct StoredAction
{
	float steering = 0.0F;
	float throttle = 0.0F;

	static StoredAction from(Action a);
	[[nodiscard]] Action action() const { return {steering, throttle}; }
	bool operator==(const StoredAction&) const = default;
};

struct Frame
{
	Image image;
	float speed = 0.0F;
	StoredAction action;                      // executed action a
	std::optional<StoredAction> expert_action;  // a*, absent for policy-collected data
	std::uint8_t collision = 0;

	bool operator==(const Frame&) const = default;
};

struct EpisodeRecord
{
	std::string id;
	EpisodeSource source = EpisodeSource::expert;
	double dt = 0.1;
	std::vector<Frame> frames;
	bool ended_in_collision = false;

	[[nodiscard]] int width() const { return frames.empty() ? 0 : frames.front().image.width; }
	[[nodiscard]] int height() const { return frames.empty() ? 0 : frames.front().image.height; }
	[[nodiscard]] std::size_t collision_frames() const;
	bool operator==(const EpisodeRecord&) const = default;
};

/// Number of trailing frames marked as collision: round(0.5 s / dt).
int collision_window(double dt);

/// Marks the final min(round(0.5/dt), T) frames c=1 and all earlier frames c=0.
/// Rejects episodes that did not end in a collision.
EpisodeRecord back_label_collisions(EpisodeRecord episode);

void validate_episode(const EpisodeRecord& episode);

void write_episode(const EpisodeRecord& episode, const std::filesystem::path& path);
EpisodeRecord read_episode(const std::filesystem::path& path);

/// Read-only collection of episodes with sampling. Copies share episode storage.
class Dataset
{
public:
	Dataset() = default;
	explicit Dataset(std::vector<std::shared_ptr<const EpisodeRecord>> episodes);

	[[nodiscard]] std::span<const std::shared_ptr<const EpisodeRecord>> episodes() const { return episodes_; }
	[[nodiscard]] std::size_t size() const { return episodes_.size(); }
	[[nodiscard]] std::size_t total_frames() const;
	[[nodiscard]] std::size_t collision_frames() const;

	/// Splits by episode: every `holdout_every`-th episode goes to the second set.
	[[nodiscard]] std::pair<Dataset, Dataset> split(std::size_t holdout_every) const;

private:
	std::vector<std::shared_ptr<const EpisodeRecord>> episodes_;
};

struct FrameWindow
{
	const EpisodeRecord* episode = nullptr;
	std::size_t start = 0;
	std::size_t length = 0;

	[[nodiscard]] std::span<const Frame> frames() const
	{
		return std::span<const Frame>(episode->frames).subspan(start, length);
	}
};

struct FrameRef
{
	const EpisodeRecord* episode = nullptr;
	std::size_t index = 0;

	[[nodiscard]] const Frame& frame() const { return episode->frames[index]; }
};

/// Every valid (episode, start) window of `length` frames; windows never span episodes.
std::vector<FrameWindow> enumerate_windows(const Dataset& data, std::size_t length);

/// n windows drawn uniformly over all valid start indices across episodes.
std::vector<FrameWindow> sample_sequences(const Dataset& data, std::size_t n, std::size_t length, std::mt19937_64& rng);

struct FrameFilter
{
	/// Expert episodes only; the anchor and its next horizon-1 successors must all carry a* and c=0.
	bool collision_free_expert_only = false;
	std::size_t horizon = 1;
};

bool frame_eligible(const EpisodeRecord& episode, std::size_t index, const FrameFilter& filter);
std::vector<FrameRef> eligible_frames(const Dataset& data, const FrameFilter& filter);
std::vector<FrameRef> sample_frames(const Dataset& data, std::size_t n, std::mt19937_64& rng, const FrameFilter& filter);

/// Directory-backed append-only store: one file per episode plus a JSON manifest.
class EpisodeStore
{
public:
	/// Opens (creating if needed) a store rooted at `dir` and loads every episode in its manifest.
	static EpisodeStore open(const std::filesystem::path& dir);
	/// A store that keeps episodes only in memory.
	static EpisodeStore in_memory();

	void append_episode(EpisodeRecord episode);
	/// Shares the record with the caller instead of copying it.
	void append_episode(std::shared_ptr<const EpisodeRecord> episode);

	[[nodiscard]] const Dataset& dataset() const { return dataset_; }
	[[nodiscard]] std::size_t size() const { return dataset_.size(); }
	[[nodiscard]] std::size_t total_frames() const { return dataset_.total_frames(); }
	[[nodiscard]] std::size_t collision_frames() const { return dataset_.collision_frames(); }
	[[nodiscard]] const std::optional<std::filesystem::path>& directory() const { return dir_; }

private:
	void write_manifest() const;

	std::optional<std::filesystem::path> dir_;
	std::vector<std::string> files_;
	Dataset dataset_;
};

} // namespace dirl
