#pragma once

#include "dirl/episode_store.hpp"
#include "dirl/sim.hpp"

#include <torch/torch.h>

#include <span>
#include <vector>

namespace dirl
{

struct ResidualBlockImpl : torch::nn::Module
{
	ResidualBlockImpl(int in_channels, int out_channels, int stride);
	torch::Tensor forward(const torch::Tensor& x);

	torch::nn::Conv2d conv1{nullptr};
	torch::nn::Conv2d conv2{nullptr};
	torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Strided residual CNN over [B, 3, H, W] images in [0, 1], flattened into a dense feature layer.
struct ImageEncoderImpl : torch::nn::Module
{
	ImageEncoderImpl(int height, int width, int channels, int features);
	torch::Tensor forward(const torch::Tensor& images);

	torch::nn::Conv2d stem{nullptr};
	torch::nn::Sequential blocks{nullptr};
	torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ImageEncoder);

/// Dense projection to a coarse grid, then repeated upsample-and-convolve up to full resolution.
struct ImageDecoderImpl : torch::nn::Module
{
	ImageDecoderImpl(int in_features, int height, int width, int channels, int out_channels);
	torch::Tensor forward(const torch::Tensor& features);

	int coarse_h;
	int coarse_w;
	int channels;
	torch::nn::Linear fc{nullptr};
	torch::nn::Conv2d up1{nullptr};
	torch::nn::Conv2d up2{nullptr};
	torch::nn::Conv2d out{nullptr};
};
TORCH_MODULE(ImageDecoder);

/// [N, 3, H, W] float tensor with values in [0, 1].
torch::Tensor images_to_tensor(std::span<const Image* const> images);
torch::Tensor image_to_tensor(const Image& image);

/// [N, 2] steering and throttle.
torch::Tensor actions_to_tensor(std::span<const StoredAction> actions);

/// Steering through tanh, throttle through sigmoid; x has trailing dimension 2.
torch::Tensor squash_actions(const torch::Tensor& x);

void require_image_size(int height, int width);

} // namespace dirl
