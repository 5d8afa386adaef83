#include "dirl/teleop.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/core/detail/base64.hpp>
#include <boost/beast/websocket.hpp>
#include <png.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace dirl::teleop
{

const char* to_string(Mode m)
{
	switch (m)
	{
	case Mode::drive:
		return "drive";
	case Mode::record:
		return "record";
	case Mode::eval_monitor:
		return "eval-monitor";
	}
	return "drive";
}

std::string error_reply(const std::string& message)
{
	return nlohmann::json{{"type", "error"}, {"message", message}}.dump();
}

HandleResult handle_message(const SessionState& s, std::string_view text, double now)
{
	HandleResult r{s, std::nullopt, {}};
	auto fail = [&](const std::string& why) {
		r.state = s;
		r.error = error_reply(why);
		return r;
	};
	const auto msg = nlohmann::json::parse(text, nullptr, false);
	if (msg.is_discarded() || !msg.is_object())
		return fail("malformed message");
	const auto type_it = msg.find("type");
	if (type_it == msg.end() || !type_it->is_string())
		return fail("missing message type");
	r.type = type_it->get<std::string>();
	auto& st = r.state;

	if (r.type == "action")
	{
		const auto steer = msg.find("steering");
		const auto thr = msg.find("throttle");
		if (steer == msg.end() || thr == msg.end() || !steer->is_number() || !thr->is_number())
			return fail("action needs numeric steering and throttle");
		const Action a{steer->get<double>(), thr->get<double>()};
		if (!std::isfinite(a.steering) || !std::isfinite(a.throttle))
			return fail("action values must be finite");
		st.latest_action = a.clamped();
		st.last_input_time = now;
	}
	else if (r.type == "estop")
	{
		st.estop = true;
		st.latest_action = Action{};
	}
	else if (r.type == "reset")
	{
		st.reset_requested = true;
	}
	else if (r.type == "record")
	{
		const auto on = msg.find("on");
		if (on == msg.end() || !on->is_boolean())
			return fail("record needs a boolean 'on'");
		if (on->get<bool>())
		{
			if (st.mode == Mode::eval_monitor)
				return fail("recording is unavailable while a policy drives");
			if (!st.recording_episode_id)
			{
				char id[40];
				std::snprintf(id, sizeof id, "human_%06llu", static_cast<unsigned long long>(st.episodes_started));
				st.recording_episode_id = id;
				++st.episodes_started;
				st.mode = Mode::record;
			}
		}
		else if (st.recording_episode_id)
		{
			st.recording_episode_id.reset();
			st.mode = Mode::drive;
		}
	}
	else if (r.type == "config")
	{
		const auto task = msg.find("task");
		if (task == msg.end() || !task->is_string())
			return fail("config needs a task");
		ConfigRequest req;
		const auto name = task->get<std::string>();
		if (name == "easy")
			req.task = Task::easy;
		else if (name == "hard")
			req.task = Task::hard;
		else
			return fail("unknown task '" + name + "'");
		req.seed = default_layout_seed(req.task);
		if (const auto seed = msg.find("seed"); seed != msg.end())
		{
			if (!seed->is_number_unsigned())
				return fail("seed must be a non-negative integer");
			req.seed = seed->get<std::uint64_t>();
		}
		st.config_request = req;
	}
	else
	{
		return fail("unknown message type '" + r.type + "'");
	}
	return r;
}

// ---------------------------------------------------------------------------------------------------------------
// PNG and base64

namespace
{

void png_append(png_structp png, png_bytep data, png_size_t n)
{
	auto* out = static_cast<std::string*>(png_get_io_ptr(png));
	out->append(reinterpret_cast<const char*>(data), n);
}

void png_flush_noop(png_structp) {}

struct PngReadCursor
{
	std::string_view data;
	std::size_t offset = 0;
};

void png_consume(png_structp png, png_bytep out, png_size_t n)
{
	auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
	if (cur->offset + n > cur->data.size())
		png_error(png, "truncated PNG");
	std::memcpy(out, cur->data.data() + cur->offset, n);
	cur->offset += n;
}

[[noreturn]] void png_fail(png_structp, png_const_charp msg)
{
	throw std::runtime_error(std::string("png: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

} // namespace

std::string encode_png(const Image& image)
{
	if (image.height <= 0 || image.width <= 0 ||
		image.rgb.size() != static_cast<std::size_t>(image.height) * image.width * 3)
		throw std::invalid_argument("encode_png: malformed image");
	png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
	if (png == nullptr)
		throw std::runtime_error("png: out of memory");
	png_infop info = png_create_info_struct(png);
	std::string out;
	try
	{
		if (info == nullptr)
			throw std::runtime_error("png: out of memory");
		png_set_write_fn(png, &out, png_append, png_flush_noop);
		png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
					 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
		png_write_info(png, info);
		for (int row = 0; row < image.height; ++row)
			png_write_row(png, image.rgb.data() + static_cast<std::size_t>(row) * image.width * 3);
		png_write_end(png, nullptr);
	}
	catch (...)
	{
		png_destroy_write_struct(&png, &info);
		throw;
	}
	png_destroy_write_struct(&png, &info);
	return out;
}

Image decode_png(std::string_view bytes)
{
	png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
	if (png == nullptr)
		throw std::runtime_error("png: out of memory");
	png_infop info = png_create_info_struct(png);
	PngReadCursor cur{bytes};
	Image img;
	try
	{
		if (info == nullptr)
			throw std::runtime_error("png: out of memory");
		png_set_read_fn(png, &cur, png_consume);
		png_read_info(png, info);
		if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8)
			throw std::runtime_error("png: expected 8-bit RGB");
		img = Image(static_cast<int>(png_get_image_height(png, info)), static_cast<int>(png_get_image_width(png, info)));
		for (int row = 0; row < img.height; ++row)
			png_read_row(png, img.rgb.data() + static_cast<std::size_t>(row) * img.width * 3, nullptr);
	}
	catch (...)
	{
		png_destroy_read_struct(&png, &info, nullptr);
		throw;
	}
	png_destroy_read_struct(&png, &info, nullptr);
	return img;
}

std::string base64_encode(std::string_view bytes)
{
	namespace b64 = boost::beast::detail::base64;
	std::string out(b64::encoded_size(bytes.size()), '\0');
	out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
	return out;
}

std::string base64_decode(std::string_view text)
{
	namespace b64 = boost::beast::detail::base64;
	std::string out(b64::decoded_size(text.size()), '\0');
	out.resize(b64::decode(out.data(), text.data(), text.size()).first);
	if (base64_encode(out) != text)
		throw std::invalid_argument("base64_decode: invalid input");
	return out;
}

// ---------------------------------------------------------------------------------------------------------------
// Engine

namespace
{

Simulator make_sim(Task task, std::uint64_t seed, const SimConfig& cfg)
{
	auto layout = task_layout(task, seed, cfg);
	const auto start = reset(layout.track, 0, 0, cfg).state;
	return Simulator(std::move(layout.track), std::move(layout.obstacles), cfg, start);
}

} // namespace

Engine::Engine(EngineOptions options, EpisodeStore& store)
	: opt_(std::move(options)),
	  store_(store),
	  sim_(make_sim(opt_.task, opt_.layout_seed.value_or(default_layout_seed(opt_.task)), opt_.sim))
{
}

void Engine::rebuild(Task task, std::uint64_t seed)
{
	opt_.task = task;
	opt_.layout_seed = seed;
	sim_ = make_sim(task, seed, opt_.sim);
}

void Engine::close_recording(SessionState& s, bool collided)
{
	if (recording_)
	{
		auto ep = std::move(*recording_);
		recording_.reset();
		if (!ep.frames.empty())
		{
			if (collided)
			{
				ep.ended_in_collision = true;
				ep = back_label_collisions(std::move(ep));
			}
			store_.append_episode(std::move(ep));
		}
	}
	if (collided)
	{
		s.recording_episode_id.reset();
		if (s.mode == Mode::record)
			s.mode = Mode::drive;
	}
}

void Engine::finish(SessionState& s)
{
	close_recording(s, false);
	s.recording_episode_id.reset();
	if (s.mode == Mode::record)
		s.mode = Mode::drive;
}

nlohmann::json Engine::tick(SessionState& s, double now)
{
	if (opt_.autopilot)
		s.mode = Mode::eval_monitor;
	if (s.config_request)
	{
		close_recording(s, false);
		rebuild(s.config_request->task, s.config_request->seed);
		s.config_request.reset();
		s.estop = false;
	}
	if (s.reset_requested)
	{
		close_recording(s, false);
		sim_.reset_to_centerline();
		s.reset_requested = false;
		s.estop = false;
		++interventions_;
	}
	if (recording_ && (!s.recording_episode_id || *s.recording_episode_id != recording_->id))
		close_recording(s, false);
	if (s.estop && recording_)
		close_recording(s, true);
	if (!s.estop && s.recording_episode_id && !recording_)
		recording_ = EpisodeRecord{*s.recording_episode_id, EpisodeSource::expert, opt_.sim.dt, {}, false};

	const auto obs = sim_.observe();
	Action a;
	if (s.estop)
		a = Action{};
	else if (opt_.autopilot)
		a = opt_.autopilot(obs).clamped();
	else if (now - s.last_input_time <= opt_.idle_timeout)
		a = s.latest_action;
	last_applied_ = a;

	const bool collided = sim_.advance(a);
	if (recording_)
	{
		Frame f;
		f.image = obs.image;
		f.speed = static_cast<float>(obs.speed);
		f.action = StoredAction::from(a);
		f.expert_action = f.action;
		recording_->frames.push_back(std::move(f));
	}
	if (collided && !s.estop)
	{
		// The car holds until the operator resets it.
		close_recording(s, true);
		s.estop = true;
		s.latest_action = Action{};
		++interventions_;
	}
	++s.tick;

	const auto view = sim_.observe();
	return nlohmann::json{
		{"type", "frame"},
		{"seq", s.tick},
		{"image", base64_encode(encode_png(view.image))},
		{"speed", view.speed},
		{"collision", sim_.in_collision()},
		{"recording", recording_.has_value()},
		{"lap_progress", sim_.progress()},
		{"mode", to_string(s.mode)},
		{"estop", s.estop},
	};
}

// ---------------------------------------------------------------------------------------------------------------
// Server

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace
{

constexpr std::size_t kMaxQueuedFrames = 2;

class Client : public std::enable_shared_from_this<Client>
{
public:
	using MessageFn = std::function<std::optional<std::string>(const std::string&)>;

	Client(tcp::socket socket, MessageFn on_message, std::atomic<std::uint64_t>& dropped)
		: ws_(std::move(socket)), on_message_(std::move(on_message)), dropped_(dropped)
	{
	}

	void start()
	{
		ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
		ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
			if (ec)
				return;
			self->open_ = true;
			self->read();
		});
	}

	void send_frame(std::shared_ptr<const std::string> frame)
	{
		if (!open_)
			return;
		std::size_t frames = 0;
		for (const auto& q : queue_)
			frames += q.second ? 1 : 0;
		if (frames >= kMaxQueuedFrames)
		{
			++dropped_;
			return;
		}
		queue_.emplace_back(std::move(frame), true);
		write();
	}

	void send_reply(std::string reply)
	{
		if (!open_)
			return;
		queue_.emplace_back(std::make_shared<const std::string>(std::move(reply)), false);
		write();
	}

	void close()
	{
		if (!open_)
			return;
		open_ = false;
		beast::error_code ec;
		beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
		beast::get_lowest_layer(ws_).socket().close(ec);
	}

	[[nodiscard]] bool open() const { return open_; }

private:
	void read()
	{
		ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
			if (ec)
			{
				self->open_ = false;
				return;
			}
			auto text = beast::buffers_to_string(self->buffer_.data());
			self->buffer_.consume(self->buffer_.size());
			if (auto reply = self->on_message_(text))
				self->send_reply(std::move(*reply));
			self->read();
		});
	}

	void write()
	{
		if (writing_ || queue_.empty() || !open_)
			return;
		writing_ = true;
		ws_.text(true);
		ws_.async_write(net::buffer(*queue_.front().first), [self = shared_from_this()](beast::error_code ec, std::size_t) {
			self->writing_ = false;
			self->queue_.pop_front();
			if (ec)
			{
				self->open_ = false;
				return;
			}
			self->write();
		});
	}

	websocket::stream<beast::tcp_stream> ws_;
	beast::flat_buffer buffer_;
	MessageFn on_message_;
	std::atomic<std::uint64_t>& dropped_;
	std::deque<std::pair<std::shared_ptr<const std::string>, bool>> queue_;  // (payload, is_frame)
	bool writing_ = false;
	bool open_ = false;
};

} // namespace

struct Server::Impl
{
	Impl(ServerOptions o, EpisodeStore& store) : opt(std::move(o)), engine(opt.engine, store), acceptor(ioc) {}

	double now() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch).count(); }

	void accept()
	{
		acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
			if (ec)
				return;
			auto client = std::make_shared<Client>(
				std::move(socket), [this](const std::string& text) { return on_message(text); }, dropped);
			clients.push_back(client);
			client->start();
			accept();
		});
	}

	std::optional<std::string> on_message(const std::string& text)
	{
		const double t = now();
		std::lock_guard lock(mu);
		auto r = handle_message(state, text, t);
		if (r.error)
			return r.error;
		state = std::move(r.state);
		if (r.type == "action")
			pending_receipts.push_back(t);
		return std::nullopt;
	}

	void tick_loop()
	{
		const auto period = std::chrono::milliseconds(opt.tick_ms);
		auto next = std::chrono::steady_clock::now();
		double last_start = -1.0;
		while (running)
		{
			std::this_thread::sleep_until(next);
			next += period;
			if (!running)
				break;
			const double t = now();
			std::shared_ptr<const std::string> frame;
			{
				std::lock_guard lock(mu);
				if (last_start >= 0.0)
					stats.tick_periods.push_back(t - last_start);
				last_start = t;
				for (double r : pending_receipts)
					stats.action_latencies.push_back(t - r);
				pending_receipts.clear();
				frame = std::make_shared<const std::string>(engine.tick(state, t).dump());
				++stats.ticks;
				stats.interventions = engine.interventions();
			}
			net::post(ioc, [this, frame] {
				std::erase_if(clients, [](const auto& c) { return !c->open() && c.use_count() == 1; });
				for (auto& c : clients)
					c->send_frame(frame);
			});
		}
	}

	ServerOptions opt;
	Engine engine;
	SessionState state;
	mutable std::mutex mu;
	ServerStats stats;
	std::vector<double> pending_receipts;
	std::atomic<std::uint64_t> dropped{0};

	net::io_context ioc;
	tcp::acceptor acceptor;
	std::vector<std::shared_ptr<Client>> clients;
	std::optional<net::executor_work_guard<net::io_context::executor_type>> work;
	std::thread net_thread;
	std::thread tick_thread;
	std::atomic<bool> running{false};
	std::chrono::steady_clock::time_point epoch = std::chrono::steady_clock::now();
};

Server::Server(ServerOptions options, EpisodeStore& store)
{
	if (options.tick_ms <= 0)
		throw std::invalid_argument("tick period must be positive");
	impl_ = std::make_unique<Impl>(std::move(options), store);
}

Server::~Server()
{
	stop();
}

unsigned short Server::start()
{
	auto& m = *impl_;
	if (m.running)
		throw std::logic_error("server already running");
	const tcp::endpoint ep(net::ip::make_address(m.opt.address), m.opt.port);
	m.acceptor.open(ep.protocol());
	m.acceptor.set_option(net::socket_base::reuse_address(true));
	m.acceptor.bind(ep);
	m.acceptor.listen();
	const auto port = m.acceptor.local_endpoint().port();
	if (m.opt.engine.autopilot)
		m.state.mode = Mode::eval_monitor;
	m.accept();
	m.work.emplace(net::make_work_guard(m.ioc));
	m.running = true;
	m.net_thread = std::thread([&m] { m.ioc.run(); });
	m.tick_thread = std::thread([&m] { m.tick_loop(); });
	return port;
}

void Server::stop()
{
	auto& m = *impl_;
	if (!m.running.exchange(false))
		return;
	m.tick_thread.join();
	net::post(m.ioc, [&m] {
		beast::error_code ec;
		m.acceptor.close(ec);
		for (auto& c : m.clients)
			c->close();
	});
	m.work.reset();
	m.net_thread.join();
	m.clients.clear();
	std::lock_guard lock(m.mu);
	m.engine.finish(m.state);
}

ServerStats Server::stats() const
{
	std::lock_guard lock(impl_->mu);
	auto s = impl_->stats;
	s.frames_dropped = impl_->dropped;
	return s;
}

} // namespace dirl::teleop
