#include "dirl/episode_store.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dirl
{

namespace
{

constexpr std::array<char, 8> kEpisodeMagic{'D', 'I', 'R', 'L', 'E', 'P', '0', '1'};
constexpr const char* kManifestName = "manifest.json";

static_assert(std::endian::native == std::endian::little, "episode files are written in host byte order");

template <typename T>
void put(std::ostream& out, T value)
{
	out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in)
{
	T value{};
	in.read(reinterpret_cast<char*>(&value), sizeof(T));
	if (!in)
	{
		throw StoreError("episode file truncated");
	}
	return value;
}

} // namespace

const char* to_string(EpisodeSource s)
{
	return s == EpisodeSource::expert ? "expert" : "policy";
}

EpisodeSource source_from_string(const std::string& s)
{
	if (s == "expert")
	{
		return EpisodeSource::expert;
	}
	if (s == "policy")
	{
		return EpisodeSource::policy;
	}
	throw StoreError("unknown episode source: " + s);
}

StoredAction StoredAction::from(Action a)
{
	const Action c = a.clamped();
	return {static_cast<float>(c.steering), static_cast<float>(c.throttle)};
}

std::size_t EpisodeRecord::collision_frames() const
{
	return static_cast<std::size_t>(
		std::count_if(frames.begin(), frames.end(), [](const Frame& f) { return f.collision != 0; }));
}

int collision_window(double dt)
{
	if (!(dt > 0.0))
	{
		throw StoreError("episode dt must be positive");
	}
	return static_cast<int>(std::lround(0.5 / dt));
}

EpisodeRecord back_label_collisions(EpisodeRecord episode)
{
	if (!episode.ended_in_collision || episode.frames.empty())
	{
		throw StoreError("back-labeling requires an episode that ended in a collision");
	}
	const std::size_t t = episode.frames.size();
	const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(collision_window(episode.dt)), t);
	for (std::size_t i = 0; i < t; ++i)
	{
		episode.frames[i].collision = i >= t - k ? 1 : 0;
	}
	return episode;
}

void validate_episode(const EpisodeRecord& episode)
{
	if (episode.frames.empty())
	{
		throw StoreError("episode has no frames");
	}
	const int h = episode.height();
	const int w = episode.width();
	for (const auto& f : episode.frames)
	{
		if (f.image.height != h || f.image.width != w ||
			f.image.rgb.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3)
		{
			throw StoreError("episode frames have inconsistent image dimensions");
		}
		if (f.collision > 1)
		{
			throw StoreError("collision flag must be 0 or 1");
		}
	}
	if (episode.ended_in_collision && episode.frames.back().collision != 1)
	{
		throw StoreError("collision episode is not back-labeled");
	}
}

void write_episode(const EpisodeRecord& episode, const std::filesystem::path& path)
{
	validate_episode(episode);
	const nlohmann::json meta = {
		{"id", episode.id},
		{"source", to_string(episode.source)},
		{"dt", episode.dt},
		{"width", episode.width()},
		{"height", episode.height()},
		{"n_frames", episode.frames.size()},
		{"ended_in_collision", episode.ended_in_collision},
	};
	const std::string blob = meta.dump();

	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out)
	{
		throw StoreError("cannot open " + path.string() + " for writing");
	}
	out.write(kEpisodeMagic.data(), kEpisodeMagic.size());
	put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
	out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
	for (const auto& f : episode.frames)
	{
		out.write(reinterpret_cast<const char*>(f.image.rgb.data()), static_cast<std::streamsize>(f.image.rgb.size()));
		put<float>(out, f.speed);
		put<float>(out, f.action.steering);
		put<float>(out, f.action.throttle);
		put<std::uint8_t>(out, f.expert_action ? 1 : 0);
		const StoredAction star = f.expert_action.value_or(StoredAction{});
		put<float>(out, star.steering);
		put<float>(out, star.throttle);
		put<std::uint8_t>(out, f.collision);
	}
	out.flush();
	if (!out)
	{
		throw StoreError("failed writing " + path.string());
	}
}

EpisodeRecord read_episode(const std::filesystem::path& path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
	{
		throw StoreError("cannot open episode file " + path.string());
	}
	std::array<char, 8> magic{};
	in.read(magic.data(), magic.size());
	if (!in || magic != kEpisodeMagic)
	{
		throw StoreError("bad episode magic in " + path.string());
	}
	const auto blob_size = get<std::uint32_t>(in);
	std::string blob(blob_size, '\0');
	in.read(blob.data(), blob_size);
	if (!in)
	{
		throw StoreError("episode metadata truncated");
	}
	const auto meta = nlohmann::json::parse(blob);

	EpisodeRecord ep;
	ep.id = meta.at("id").get<std::string>();
	ep.source = source_from_string(meta.at("source").get<std::string>());
	ep.dt = meta.at("dt").get<double>();
	ep.ended_in_collision = meta.at("ended_in_collision").get<bool>();
	const int w = meta.at("width").get<int>();
	const int h = meta.at("height").get<int>();
	const auto n = meta.at("n_frames").get<std::size_t>();
	ep.frames.reserve(n);
	for (std::size_t i = 0; i < n; ++i)
	{
		Frame f;
		f.image = Image(h, w);
		in.read(reinterpret_cast<char*>(f.image.rgb.data()), static_cast<std::streamsize>(f.image.rgb.size()));
		f.speed = get<float>(in);
		f.action.steering = get<float>(in);
		f.action.throttle = get<float>(in);
		const auto has_star = get<std::uint8_t>(in);
		StoredAction star;
		star.steering = get<float>(in);
		star.throttle = get<float>(in);
		if (has_star != 0)
		{
			f.expert_action = star;
		}
		f.collision = get<std::uint8_t>(in);
		ep.frames.push_back(std::move(f));
	}
	validate_episode(ep);
	return ep;
}

Dataset::Dataset(std::vector<std::shared_ptr<const EpisodeRecord>> episodes) : episodes_(std::move(episodes))
{
}

std::size_t Dataset::total_frames() const
{
	std::size_t n = 0;
	for (const auto& ep : episodes_)
	{
		n += ep->frames.size();
	}
	return n;
}

std::size_t Dataset::collision_frames() const
{
	std::size_t n = 0;
	for (const auto& ep : episodes_)
	{
		n += ep->collision_frames();
	}
	return n;
}

std::pair<Dataset, Dataset> Dataset::split(std::size_t holdout_every) const
{
	std::vector<std::shared_ptr<const EpisodeRecord>> train;
	std::vector<std::shared_ptr<const EpisodeRecord>> held;
	for (std::size_t i = 0; i < episodes_.size(); ++i)
	{
		if (holdout_every > 0 && i % holdout_every == holdout_every - 1)
		{
			held.push_back(episodes_[i]);
		}
		else
		{
			train.push_back(episodes_[i]);
		}
	}
	return {Dataset(std::move(train)), Dataset(std::move(held))};
}

std::vector<FrameWindow> enumerate_windows(const Dataset& data, std::size_t length)
{
	std::vector<FrameWindow> windows;
	for (const auto& ep : data.episodes())
	{
		if (length == 0 || ep->frames.size() < length)
		{
			continue;
		}
		for (std::size_t s = 0; s + length <= ep->frames.size(); ++s)
		{
			windows.push_back({ep.get(), s, length});
		}
	}
	return windows;
}

std::vector<FrameWindow> sample_sequences(const Dataset& data, std::size_t n, std::size_t length, std::mt19937_64& rng)
{
	// Cumulative valid-start counts per episode; a single uniform index selects (episode, start).
	std::vector<std::size_t> cumulative;
	std::vector<const EpisodeRecord*> eps;
	std::size_t total = 0;
	for (const auto& ep : data.episodes())
	{
		if (length > 0 && ep->frames.size() >= length)
		{
			total += ep->frames.size() - length + 1;
			cumulative.push_back(total);
			eps.push_back(ep.get());
		}
	}
	if (total == 0)
	{
		throw InsufficientData("no episode holds a window of " + std::to_string(length) + " frames");
	}
	std::uniform_int_distribution<std::size_t> pick(0, total - 1);
	std::vector<FrameWindow> out;
	out.reserve(n);
	for (std::size_t i = 0; i < n; ++i)
	{
		const std::size_t k = pick(rng);
		const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), k);
		const auto e = static_cast<std::size_t>(it - cumulative.begin());
		const std::size_t before = e == 0 ? 0 : cumulative[e - 1];
		out.push_back({eps[e], k - before, length});
	}
	return out;
}

bool frame_eligible(const EpisodeRecord& episode, std::size_t index, const FrameFilter& filter)
{
	if (index >= episode.frames.size())
	{
		return false;
	}
	if (!filter.collision_free_expert_only)
	{
		return true;
	}
	if (episode.source != EpisodeSource::expert || filter.horizon == 0)
	{
		return false;
	}
	if (index + filter.horizon > episode.frames.size())
	{
		return false;
	}
	for (std::size_t i = index; i < index + filter.horizon; ++i)
	{
		const auto& f = episode.frames[i];
		if (f.collision != 0 || !f.expert_action)
		{
			return false;
		}
	}
	return true;
}

std::vector<FrameRef> eligible_frames(const Dataset& data, const FrameFilter& filter)
{
	std::vector<FrameRef> refs;
	for (const auto& ep : data.episodes())
	{
		for (std::size_t i = 0; i < ep->frames.size(); ++i)
		{
			if (frame_eligible(*ep, i, filter))
			{
				refs.push_back({ep.get(), i});
			}
		}
	}
	return refs;
}

std::vector<FrameRef> sample_frames(const Dataset& data, std::size_t n, std::mt19937_64& rng, const FrameFilter& filter)
{
	const auto refs = eligible_frames(data, filter);
	if (refs.empty())
	{
		throw InsufficientData("no frames satisfy the sampling filter");
	}
	std::uniform_int_distribution<std::size_t> pick(0, refs.size() - 1);
	std::vector<FrameRef> out;
	out.reserve(n);
	for (std::size_t i = 0; i < n; ++i)
	{
		out.push_back(refs[pick(rng)]);
	}
	return out;
}

EpisodeStore EpisodeStore::in_memory()
{
	return EpisodeStore{};
}

EpisodeStore EpisodeStore::open(const std::filesystem::path& dir)
{
	EpisodeStore store;
	store.dir_ = dir;
	std::filesystem::create_directories(dir);
	const auto manifest_path = dir / kManifestName;
	if (!std::filesystem::exists(manifest_path))
	{
		store.write_manifest();
		return store;
	}
	std::ifstream in(manifest_path);
	nlohmann::json manifest;
	try
	{
		manifest = nlohmann::json::parse(in);
	}
	catch (const nlohmann::json::exception& e)
	{
		throw StoreError(std::string("corrupt store manifest: ") + e.what());
	}
	std::vector<std::shared_ptr<const EpisodeRecord>> eps;
	for (const auto& entry : manifest.at("episodes"))
	{
		const auto file = entry.at("file").get<std::string>();
		eps.push_back(std::make_shared<const EpisodeRecord>(read_episode(dir / file)));
		store.files_.push_back(file);
	}
	store.dataset_ = Dataset(std::move(eps));
	return store;
}

void EpisodeStore::append_episode(EpisodeRecord episode)
{
	append_episode(std::make_shared<const EpisodeRecord>(std::move(episode)));
}

void EpisodeStore::append_episode(std::shared_ptr<const EpisodeRecord> episode)
{
	if (!episode)
	{
		throw StoreError("null episode");
	}
	validate_episode(*episode);
	if (dir_)
	{
		char name[32];
		std::snprintf(name, sizeof(name), "episode_%06zu.bin", files_.size());
		write_episode(*episode, *dir_ / name);
		files_.emplace_back(name);
	}
	std::vector<std::shared_ptr<const EpisodeRecord>> eps(dataset_.episodes().begin(), dataset_.episodes().end());
	eps.push_back(std::move(episode));
	dataset_ = Dataset(std::move(eps));
	if (dir_)
	{
		write_manifest();
	}
}

void EpisodeStore::write_manifest() const
{
	nlohmann::json entries = nlohmann::json::array();
	for (std::size_t i = 0; i < files_.size(); ++i)
	{
		const auto& ep = *dataset_.episodes()[i];
		entries.push_back({
			{"file", files_[i]},
			{"id", ep.id},
			{"source", to_string(ep.source)},
			{"n_frames", ep.frames.size()},
			{"collision_frames", ep.collision_frames()},
		});
	}
	const nlohmann::json manifest = {{"version", 1}, {"episodes", entries}};
	const auto tmp = *dir_ / (std::string(kManifestName) + ".tmp");
	{
		std::ofstream out(tmp, std::ios::trunc);
		if (!out)
		{
			throw StoreError("cannot write store manifest");
		}
		out << manifest.dump(2) << '\n';
		out.flush();
		if (!out)
		{
			throw StoreError("failed writing store manifest");
		}
	}
	std::filesystem::rename(tmp, *dir_ / kManifestName);
}

} // namespace dirl
