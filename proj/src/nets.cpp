#include "dirl/nets.hpp"

#include <stdexcept>

namespace dirl
{

namespace nn = torch::nn;

namespace
{
nn::Conv2d conv(int in, int out, int kernel, int stride)
{
	return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}
} // namespace

void require_image_size(int height, int width)
{
	if (height < 16 || width < 16 || height % 8 != 0 || width % 8 != 0)
		throw std::invalid_argument("image size must be a multiple of 8 and at least 16");
}

ResidualBlockImpl::ResidualBlockImpl(int in_channels, int out_channels, int stride)
{
	conv1 = register_module("conv1", conv(in_channels, out_channels, 3, stride));
	conv2 = register_module("conv2", conv(out_channels, out_channels, 3, 1));
	if (stride != 1 || in_channels != out_channels)
		skip = register_module("skip", conv(in_channels, out_channels, 1, stride));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x)
{
	auto y = conv2(torch::silu(conv1(x)));
	return torch::silu(y + (skip ? skip(x) : x));
}

ImageEncoderImpl::ImageEncoderImpl(int height, int width, int channels, int features)
{
	require_image_size(height, width);
	stem = register_module("stem", conv(3, channels, 3, 2));
	blocks = register_module("blocks", nn::Sequential(ResidualBlock(channels, channels, 1),
													  ResidualBlock(channels, 2 * channels, 2),
													  ResidualBlock(2 * channels, 2 * channels, 2)));
	head = register_module("head", nn::Linear(2 * channels * (height / 8) * (width / 8), features));
}

torch::Tensor ImageEncoderImpl::forward(const torch::Tensor& images)
{
	auto x = blocks->forward(torch::silu(stem(images)));
	return torch::silu(head(x.flatten(1)));
}

ImageDecoderImpl::ImageDecoderImpl(int in_features, int height, int width, int channels_, int out_channels)
	: coarse_h(height / 8), coarse_w(width / 8), channels(channels_)
{
	require_image_size(height, width);
	fc = register_module("fc", nn::Linear(in_features, 2 * channels * coarse_h * coarse_w));
	up1 = register_module("up1", conv(2 * channels, channels, 3, 1));
	up2 = register_module("up2", conv(channels, channels, 3, 1));
	out = register_module("out", conv(channels, out_channels, 1, 1));
}

torch::Tensor ImageDecoderImpl::forward(const torch::Tensor& features)
{
	namespace F = torch::nn::functional;
	const auto up = F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest);
	auto x = torch::silu(fc(features)).view({-1, 2 * channels, coarse_h, coarse_w});
	x = torch::silu(up1(F::interpolate(x, up)));
	x = torch::silu(up2(F::interpolate(x, up)));
	return F::interpolate(out(x), up);
}

torch::Tensor image_to_tensor(const Image& image)
{
	const Image* ptr = &image;
	return images_to_tensor(std::span<const Image* const>(&ptr, 1));
}

torch::Tensor images_to_tensor(std::span<const Image* const> images)
{
	if (images.empty())
		throw std::invalid_argument("no images");
	const int h = images.front()->height;
	const int w = images.front()->width;
	const auto n = static_cast<std::int64_t>(images.size());
	auto bytes = torch::empty({n, h, w, 3}, torch::kUInt8);
	auto* dst = bytes.data_ptr<std::uint8_t>();
	const std::size_t per = static_cast<std::size_t>(h) * w * 3;
	for (std::size_t i = 0; i < images.size(); ++i)
	{
		const Image& im = *images[i];
		if (im.height != h || im.width != w)
			throw std::invalid_argument("mixed image sizes in batch");
		std::copy(im.rgb.begin(), im.rgb.end(), dst + i * per);
	}
	return bytes.permute({0, 3, 1, 2}).to(torch::kFloat32).div_(255.0F).contiguous();
}

torch::Tensor actions_to_tensor(std::span<const StoredAction> actions)
{
	auto t = torch::empty({static_cast<std::int64_t>(actions.size()), 2}, torch::kFloat32);
	auto acc = t.accessor<float, 2>();
	for (std::size_t i = 0; i < actions.size(); ++i)
	{
		acc[static_cast<std::int64_t>(i)][0] = actions[i].steering;
		acc[static_cast<std::int64_t>(i)][1] = actions[i].throttle;
	}
	return t;
}

torch::Tensor squash_actions(const torch::Tensor& x)
{
	return torch::stack({torch::tanh(x.select(-1, 0)), torch::sigmoid(x.select(-1, 1))}, -1);
}

} // namespace dirl
