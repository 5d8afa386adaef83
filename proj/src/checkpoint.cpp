#include "dirl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dirl
{

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace
{

constexpr char kMagic[8] = {'D', 'I', 'R', 'L', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v)
{
	out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in)
{
	T v{};
	if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
		throw CheckpointError("truncated checkpoint");
	return v;
}

std::string get_string(std::istream& in, std::uint32_t n)
{
	if (n > (1U << 26))
		throw CheckpointError("implausible string length in checkpoint");
	std::string s(n, '\0');
	if (!in.read(s.data(), n))
		throw CheckpointError("truncated checkpoint");
	return s;
}

std::map<std::string, torch::Tensor> named_tensors(torch::nn::Module& m)
{
	std::map<std::string, torch::Tensor> out;
	for (const auto& p : m.named_parameters())
		out.emplace(p.key(), p.value());
	for (const auto& b : m.named_buffers())
		out.emplace(b.key(), b.value());
	return out;
}

void load_into(torch::nn::Module& m, const std::map<std::string, torch::Tensor>& tensors)
{
	auto dst = named_tensors(m);
	if (dst.size() != tensors.size())
		throw CheckpointError("checkpoint tensor count does not match the model");
	torch::NoGradGuard guard;
	for (auto& [name, t] : dst)
	{
		const auto it = tensors.find(name);
		if (it == tensors.end())
			throw CheckpointError("checkpoint lacks tensor '" + name + "'");
		if (it->second.sizes() != t.sizes())
			throw CheckpointError("shape mismatch for tensor '" + name + "'");
		t.copy_(it->second.to(t.scalar_type()));
	}
}

int header_int(const nlohmann::json& h, const char* key)
{
	if (!h.contains(key) || !h.at(key).is_number_integer())
		throw CheckpointError(std::string("checkpoint header lacks '") + key + "'");
	return h.at(key).get<int>();
}

RunConfig header_config(const nlohmann::json& h)
{
	if (!h.contains("config") || !h.at("config").is_object())
		throw CheckpointError("checkpoint header lacks a config");
	RunConfig cfg;
	try
	{
		cfg.update_from_json(h.at("config"));
		cfg.validate();
	}
	catch (const ConfigError& e)
	{
		throw CheckpointError(std::string("checkpoint config: ") + e.what());
	}
	return cfg;
}

void require_kind(const nlohmann::json& h, const char* kind)
{
	if (h.value("kind", std::string{}) != kind)
		throw CheckpointError(std::string("checkpoint is not a ") + kind);
}

} // namespace

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
					  const std::map<std::string, torch::Tensor>& tensors)
{
	if (path.has_parent_path())
		std::filesystem::create_directories(path.parent_path());
	const auto tmp = std::filesystem::path(path.string() + ".tmp");
	{
		std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
		if (!out)
			throw CheckpointError("cannot write " + tmp.string());
		out.write(kMagic, sizeof kMagic);
		put<std::uint32_t>(out, kCheckpointVersion);
		const std::string blob = header.dump();
		put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
		out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
		put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
		for (const auto& [name, tensor] : tensors)
		{
			put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
			out.write(name.data(), static_cast<std::streamsize>(name.size()));
			const auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
			put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
			for (auto d : t.sizes())
				put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
			out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
					  static_cast<std::streamsize>(t.numel() * sizeof(float)));
		}
		if (!out)
			throw CheckpointError("failed writing " + tmp.string());
	}
	std::filesystem::rename(tmp, path);
}

CheckpointContents read_checkpoint(const std::filesystem::path& path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw CheckpointError("cannot open " + path.string());
	char magic[sizeof kMagic];
	if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
		throw CheckpointError("not a checkpoint: " + path.string());
	const auto version = get<std::uint32_t>(in);
	if (version != kCheckpointVersion)
		throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
	CheckpointContents c;
	try
	{
		c.header = nlohmann::json::parse(get_string(in, get<std::uint32_t>(in)));
	}
	catch (const nlohmann::json::parse_error& e)
	{
		throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
	}
	const auto count = get<std::uint32_t>(in);
	for (std::uint32_t i = 0; i < count; ++i)
	{
		auto name = get_string(in, get<std::uint32_t>(in));
		const auto rank = get<std::uint32_t>(in);
		if (rank > 8)
			throw CheckpointError("implausible tensor rank in checkpoint");
		std::vector<std::int64_t> dims;
		std::int64_t numel = 1;
		for (std::uint32_t k = 0; k < rank; ++k)
		{
			dims.push_back(static_cast<std::int64_t>(get<std::uint64_t>(in)));
			numel *= dims.back();
		}
		if (numel < 0 || numel > (std::int64_t{1} << 31))
			throw CheckpointError("implausible tensor size in checkpoint");
		auto t = torch::empty(dims, torch::kFloat32);
		if (!in.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(numel * sizeof(float))))
			throw CheckpointError("truncated checkpoint");
		c.tensors.emplace(std::move(name), std::move(t));
	}
	return c;
}

void save_world_model(WorldModel& model, const RunConfig& cfg, const std::filesystem::path& path)
{
	RunConfig copy = cfg;
	copy.world = model->cfg;
	nlohmann::json h{{"kind", "world_model"},
					 {"image_height", model->image_height},
					 {"image_width", model->image_width},
					 {"horizon", model->cfg.horizon},
					 {"lambda", cfg.evidential.lambda},
					 {"config", copy.to_json()}};
	write_checkpoint(path, h, named_tensors(*model));
}

WorldModel load_world_model(const std::filesystem::path& path, RunConfig* cfg_out)
{
	auto c = read_checkpoint(path);
	require_kind(c.header, "world_model");
	auto cfg = header_config(c.header);
	WorldModel model(cfg.world, header_int(c.header, "image_height"), header_int(c.header, "image_width"));
	load_into(*model, c.tensors);
	model->eval();
	if (cfg_out)
		*cfg_out = cfg;
	return model;
}

void save_policy(Policy& policy, const RunConfig& cfg, const std::filesystem::path& path,
				 const nlohmann::json& metadata)
{
	RunConfig copy = cfg;
	copy.policy = policy->cfg;
	nlohmann::json h{{"kind", "policy"},
					 {"image_height", policy->image_height},
					 {"image_width", policy->image_width},
					 {"horizon", policy->horizon},
					 {"lambda", cfg.evidential.lambda},
					 {"config", copy.to_json()},
					 {"metadata", metadata}};
	write_checkpoint(path, h, named_tensors(*policy));
}

Policy load_policy(const std::filesystem::path& path, RunConfig* cfg_out, nlohmann::json* metadata_out)
{
	auto c = read_checkpoint(path);
	require_kind(c.header, "policy");
	auto cfg = header_config(c.header);
	Policy policy(cfg.policy, header_int(c.header, "horizon"), header_int(c.header, "image_height"),
				  header_int(c.header, "image_width"));
	load_into(*policy, c.tensors);
	policy->eval();
	if (cfg_out)
		*cfg_out = cfg;
	if (metadata_out)
		*metadata_out = c.header.value("metadata", nlohmann::json::object());
	return policy;
}

} // namespace dirl
