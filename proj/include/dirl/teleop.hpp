#pragma once

#include "dirl/collection.hpp"
#include "dirl/config.hpp"
#include "dirl/episode_store.hpp"
#include "dirl/sim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dirl::teleop
{

enum class Mode
{
	drive,
	record,
	eval_monitor,
};

const char* to_string(Mode m);

struct ConfigRequest
{
	Task task = Task::easy;
	std::uint64_t seed = 0;
};

struct SessionState
{
	Mode mode = Mode::drive;
	std::uint64_t tick = 0;
	Action latest_action;
	double last_input_time = -1e300;  // s, on the caller's clock
	bool estop = false;
	std::optional<std::string> recording_episode_id;
	bool reset_requested = false;
	std::optional<ConfigRequest> config_request;
	std::uint64_t episodes_started = 0;
};

struct HandleResult
{
	SessionState state;
	std::optional<std::string> error;  // JSON error reply; state is unchanged when set
	std::string type;                  // message type when it parsed
};

/// Pure transition for one client message received at `now` seconds.
HandleResult handle_message(const SessionState& s, std::string_view text, double now);

std::string error_reply(const std::string& message);

/// PNG bytes of an RGB image.
std::string encode_png(const Image& image);
Image decode_png(std::string_view png);
std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

struct EngineOptions
{
	SimConfig sim;
	Task task = Task::easy;
	std::optional<std::uint64_t> layout_seed;  // task default when unset
	double idle_timeout = 0.5;  // s without input before the action falls back to zero
	Controller autopilot;       // when set the session runs in eval-monitor mode
};

/// Owns the simulator and the recording episode. One call per control tick; not thread-safe.
class Engine
{
public:
	Engine(EngineOptions options, EpisodeStore& store);

	/// Applies the pending requests and the effective action, advances one step and returns the frame message.
	nlohmann::json tick(SessionState& s, double now);

	[[nodiscard]] const Simulator& simulator() const { return sim_; }
	[[nodiscard]] std::uint64_t interventions() const { return interventions_; }
	/// Action applied on the most recent tick.
	[[nodiscard]] Action last_applied() const { return last_applied_; }
	/// Stores any open recording as an episode that did not end in a collision.
	void finish(SessionState& s);

private:
	void rebuild(Task task, std::uint64_t seed);
	void close_recording(SessionState& s, bool collided);

	EngineOptions opt_;
	EpisodeStore& store_;
	Simulator sim_;
	std::optional<EpisodeRecord> recording_;
	std::uint64_t interventions_ = 0;
	Action last_applied_;
};

struct ServerOptions
{
	EngineOptions engine;
	std::string address = "127.0.0.1";
	unsigned short port = 0;  // 0 picks a free port
	int tick_ms = 100;
};

struct ServerStats
{
	std::uint64_t ticks = 0;
	std::vector<double> tick_periods;     // s between successive tick starts
	std::vector<double> action_latencies;  // s from receipt to the next tick start
	std::uint64_t interventions = 0;
	std::uint64_t frames_dropped = 0;
};

/// Websocket bridge: a network thread for clients and a fixed-rate tick thread that owns the engine.
class Server
{
public:
	Server(ServerOptions options, EpisodeStore& store);
	~Server();
	Server(const Server&) = delete;
	Server& operator=(const Server&) = delete;

	/// Binds, starts both threads and returns the bound port. Throws on bind failure.
	unsigned short start();
	void stop();
	[[nodiscard]] ServerStats stats() const;

private:
	struct Impl;
	std::unique_ptr<Impl> impl_;
};

} // namespace dirl::teleop
